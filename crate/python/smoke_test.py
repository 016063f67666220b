#!/usr/bin/env python3
"""Smoke test for the irp_py extension module.

Builds nothing itself: expects `cargo build --release -p irp-py` to have
produced target/release/libirp_py.so. Copies it next to this script as
irp_py.so, imports it, and drives a miniature end-to-end run.
"""

import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
REPO = HERE.parent


def ensure_module() -> None:
    ext = HERE / "irp_py.so"
    built = REPO / "target" / "release" / "libirp_py.so"
    if not built.exists():
        sys.exit(
            f"missing {built}; run `cargo build --release -p irp-py` first"
        )
    if not ext.exists() or built.stat().st_mtime > ext.stat().st_mtime:
        shutil.copyfile(built, ext)
    sys.path.insert(0, str(HERE))


def main() -> None:
    ensure_module()
    import irp_py

    print(f"irp_py {irp_py.__version__}")

    data = irp_py.generate_dataset(
        seed=3, n_train=80, contamination=0.3, n_test_normal=30, n_test_anomalous=30
    )
    print(f"dataset: {data!r}")
    assert data.train_size() == 80
    assert data.test_size() == 60

    # determinism of generation
    again = irp_py.generate_dataset(
        seed=3, n_train=80, contamination=0.3, n_test_normal=30, n_test_anomalous=30
    )
    assert data.labels("train") == again.labels("train")

    model = irp_py.train(data, method="irp", seed=3, budget=60, pretrain=15)
    print(f"trained: {model!r}")
    assert model.epochs() == 60
    events = model.events()
    assert events, "refinement log is empty"
    for _cycle, removed_id, median, threshold in events:
        assert abs(threshold - 1.3 * median) < 1e-9
        if removed_id is not None:
            assert removed_id in model.removed_ids()

    scores = irp_py.score(model, data, split="test", count=8)
    assert len(scores) == 60
    labels = dict(data.labels("test"))
    scored = [(score, labels[sid]) for sid, score in scores]
    auc = irp_py.auroc(scored)
    print(f"test AUROC: {auc:.4f}")
    assert 0.5 < auc <= 1.0, f"implausible AUROC {auc}"

    vanilla = irp_py.train(data, method="vanilla", seed=3, budget=60)
    assert vanilla.removed_ids() == []

    csv = irp_py.noise_sweep_csv(
        levels=[0, 30], seeds=[1, 2], n_train=40, budget=20, pretrain=5, workers=1
    )
    lines = csv.strip().splitlines()
    assert lines[0].startswith("noise_level,method,seed,auroc")
    assert len(lines) == 1 + 12, f"expected 12 report rows, got {len(lines) - 1}"
    print(f"sweep report rows: {len(lines) - 1}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
