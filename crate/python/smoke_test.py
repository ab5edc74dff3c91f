#!/usr/bin/env python3
"""Smoke test for the iotab_py extension module.

Builds the cdylib with cargo, imports it from the build directory, and
exercises every exported entry point on a small synthetic economy:
table load/save, balancing, evaluation, and the full pipeline.

Run from anywhere:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module(workdir: Path):
    subprocess.run(
        ["cargo", "build", "-p", "iotab-py"], cwd=REPO, check=True
    )
    built = REPO / "target" / "debug" / "libiotab_py.so"
    if not built.exists():  # e.g. macOS
        built = REPO / "target" / "debug" / "libiotab_py.dylib"
    shutil.copy(built, workdir / "iotab_py.so")
    sys.path.insert(0, str(workdir))


def main():
    workdir = Path(tempfile.mkdtemp(prefix="iotab-smoke-"))
    build_module(workdir)
    import iotab_py

    # Synthetic economy: 8 regions, 3 industries, linked pair present.
    econ_dir = workdir / "economy"
    info = iotab_py.synthesize_economy(
        econ_dir, industries=3, gva_rows=2, fd_cols=2, regions=8, noise=0.05, seed=11
    )
    assert info["regions"] == 8
    assert info["target_total"] > 0

    # Table round trip.
    actual = iotab_py.IOTable.load(econ_dir / "actual_table.csv")
    assert actual.industries == 3 and actual.gva_rows == 2 and actual.fd_cols == 2
    assert math.isclose(actual.total, info["target_total"], rel_tol=1e-12)
    assert actual.cell("a", 0, 0) > 0
    assert len(actual.frame()) == actual.industries + actual.gva_rows
    copy_path = workdir / "copy.csv"
    actual.save(copy_path)
    copy = iotab_py.IOTable.load(copy_path)
    assert copy.frame() == actual.frame(), "save/load must round-trip the cells"

    # The grid file does not carry the linked pair; reattach it.
    assert copy.phi is None
    copy.set_phi(0, 0)
    assert copy.phi == (0, 0)

    # Balancing a balanced table to its own margins is a fixed point.
    outputs = [g for g in actual.gross_outputs]
    copy.set_phi(0, 0)
    balanced, report = iotab_py.balance(copy, outputs, actual.total, use_phi=True)
    assert report["converged"], report
    assert report["max_residual"] < 1e-10, report
    for got, want in zip(balanced.gross_outputs, outputs):
        assert math.isclose(got, want, rel_tol=1e-9)

    metrics = iotab_py.evaluate(balanced, actual)
    assert metrics["all"]["stpe"] < 1e-8, metrics["all"]
    assert metrics["all"]["n_cells"] > 0

    # Full pipeline on a small configuration.
    out_dir = workdir / "run-out"
    cfg = workdir / "run.cfg"
    cfg.write_text(
        "\n".join(
            [
                "mode = our-method",
                f"dataset_dir = {econ_dir / 'dataset'}",
                f"recipe = {econ_dir / 'recipe.csv'}",
                f"target_variables = {econ_dir / 'target_variables.csv'}",
                f"actual_table = {econ_dir / 'actual_table.csv'}",
                f"output_dir = {out_dir}",
                f"total_output = {info['target_total']}",
                "seed = 11",
                "pca_components = 4",
                "augment.samples = 200",
                "net.width = 16",
                "net.blocks = 1",
                "net.max_epochs = 2",
                "",
            ]
        )
    )
    summary = iotab_py.run_pipeline(cfg)
    statuses = dict(summary["stages"])
    for stage in ["load", "augment", "fit-pipeline", "train", "predict", "balance", "evaluate"]:
        assert statuses.get(stage) == "completed", summary["stages"]
    assert summary["balance"]["converged"]
    assert summary["metrics"]["all"]["stpe"] < 0.5
    assert (out_dir / "balanced_table.csv").exists()

    print("smoke test passed:")
    print(f"  pipeline error (whole table): {summary['metrics']['all']['stpe']:.4f}")
    print(f"  balance residual: {summary['balance']['max_residual']:.2e}")


if __name__ == "__main__":
    main()
