"""Differential testing: the rule engine and the worklist machine must agree
on every derived relation for every corpus program and configuration."""

from __future__ import annotations

import os
import subprocess
import sys

import pytest

from schemeflow.analysis import analyze
from schemeflow.frontend import read_program
from schemeflow.machine import recheck, run_fixpoint
from schemeflow.serialize import OUTPUT_RELATIONS, relation_text

from conftest import CORPUS, config, corpus_ids

DERIVED_RELATIONS = (
    "peek_ctx",
    "copy_ctx",
    "freevar",
    "state_e",
    "state_a",
    "stored_val",
    "stored_kont",
    "flow_ee",
    "flow_ea",
    "flow_ae",
    "flow_aa",
)

TRUTHINESS_MODES = ("both-branches", "appendix-exact")

SPOT_CHECK = ("05_if_conflated", "16_conflate_branches", "17_vanhorn", "18_loop_widen")


@pytest.mark.parametrize("truthiness", TRUTHINESS_MODES)
@pytest.mark.parametrize("m", [0, 1, 2])
@pytest.mark.parametrize("path", CORPUS, ids=corpus_ids())
def test_paths_agree_on_every_relation(path, m, truthiness, corpus_programs):
    program = corpus_programs[path.stem]
    cfg = config(m=m, primval_truthiness=truthiness)
    left = analyze(program, cfg)
    right = run_fixpoint(program, cfg)
    for name in DERIVED_RELATIONS:
        assert left.relations[name] == right.relations[name], (
            f"{path.stem} m={m} {truthiness}: {name} differs"
        )


@pytest.mark.parametrize("stem", SPOT_CHECK)
def test_serialized_output_is_byte_identical(stem, corpus_programs):
    program = corpus_programs[stem]
    cfg = config(m=1)
    left = analyze(program, cfg)
    right = run_fixpoint(program, cfg)
    for name in OUTPUT_RELATIONS:
        a = relation_text(left.relations[name]).encode()
        b = relation_text(right.relations[name]).encode()
        assert a == b, f"{stem}: serialized {name} differs"


@pytest.mark.parametrize("stem", SPOT_CHECK)
def test_engine_result_is_a_true_fixpoint(stem, corpus_programs):
    """The machine-side checker validates the rule engine's output."""
    program = corpus_programs[stem]
    cfg = config(m=1)
    result = analyze(program, cfg)
    assert recheck(program, cfg, result.relations)


def test_results_do_not_depend_on_hash_seed(tmp_path):
    """Byte-identical output across interpreter hash randomization seeds."""
    source = CORPUS[0].parent / "16_conflate_branches.scm"

    def run(seed: str):
        out = tmp_path / f"seed{seed}"
        env = dict(os.environ, PYTHONHASHSEED=seed)
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "schemeflow",
                "analyze",
                str(source),
                "--out",
                str(out),
                "--m",
                "1",
            ],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 0, proc.stderr
        return {f.name: f.read_bytes() for f in out.iterdir()}

    assert run("0") == run("1")


def test_agreement_survives_widening_choices(corpus_programs):
    program = corpus_programs["18_loop_widen"]
    for widen in (1, 2, 4):
        cfg = config(m=0, widen_depth=widen)
        left = analyze(program, cfg)
        right = run_fixpoint(program, cfg)
        for name in DERIVED_RELATIONS:
            assert left.relations[name] == right.relations[name], (
                f"widen={widen}: {name} differs"
            )


def test_agreement_on_fresh_source_text():
    """Paths agree on a program built outside the corpus fixtures."""
    source = "(call/cc (lambda (k) (if (k 1) 2 3)))"
    program = read_program(source)
    cfg = config(m=2)
    left = analyze(program, cfg)
    right = run_fixpoint(program, cfg)
    for name in DERIVED_RELATIONS:
        assert left.relations[name] == right.relations[name]
