"""Shared fixtures: the program corpus and small run helpers."""

from __future__ import annotations

from pathlib import Path

import pytest

from schemeflow.analysis import AnalysisConfig, analyze
from schemeflow.frontend import read_program
from schemeflow.machine import run_fixpoint

CORPUS_DIR = Path(__file__).parent / "corpus"
CORPUS = sorted(CORPUS_DIR.glob("*.scm"))

# Programs that exercise every syntactic form at least once; kept under a
# failsafe fact ceiling so a regression cannot hang the suite.
SUITE_CEILING = 2_000_000


def corpus_ids() -> list[str]:
    return [p.stem for p in CORPUS]


@pytest.fixture(scope="session")
def corpus_programs():
    return {p.stem: read_program(p.read_text()) for p in CORPUS}


def config(m: int = 0, **kw) -> AnalysisConfig:
    kw.setdefault("fact_ceiling", SUITE_CEILING)
    return AnalysisConfig(m=m, **kw)


def both_paths(source: str, cfg: AnalysisConfig):
    program = read_program(source)
    return analyze(program, cfg), run_fixpoint(program, cfg)
