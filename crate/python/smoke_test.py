"""Smoke test for the tyee Python extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/tyee-*.whl
"""

import math
import os
import random
import tempfile

import tyee

RATE = 256.0


def synth_record(record_id, subject, freq, seconds, rng):
    n = int(seconds * RATE)
    data = [math.sin(2 * math.pi * freq * i / RATE) + rng.gauss(0.0, 0.5) for i in range(n)]
    return tyee.Record(record_id, subject, [("EEG", RATE, -10.0, 10.0)], [data])


def check_metrics():
    assert tyee.accuracy([0, 0, 0, 1], [0, 0, 1, 1]) == 0.75
    assert abs(tyee.balanced_accuracy([0, 0, 0, 1], [0, 0, 1, 1]) - 5 / 6) < 1e-15
    assert abs(tyee.cohen_kappa([0, 0, 1, 1], [0, 1, 1, 1]) - 0.5) < 1e-15
    assert tyee.auroc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == 0.75
    assert abs(tyee.auprc([0.9, 0.8, 0.7], [True, False, True]) - 5 / 6) < 1e-15
    assert abs(tyee.scale_mae(math.e - 1) - 100.0) < 1e-9
    try:
        tyee.auroc([0.1, 0.2], [True, True])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class auroc should raise")


def check_record_io(tmp, rng):
    rec = synth_record("r0", "s0", 10.0, 4, rng)
    path = os.path.join(tmp, "r0.edf")
    rec.write_edf(path)
    back = tyee.read_record(path)
    step = rec.quantization_steps()[0]
    worst = max(abs(a - b) for a, b in zip(rec.data[0], back.data[0]))
    assert back.labels == ["EEG"] and back.sampling_rates == [RATE]
    assert worst <= step, (worst, step)
    filtered = back.transform([{"name": "bandpass", "low": 1, "high": 40}, {"name": "zscore"}])
    values = filtered.data[0]
    mean = sum(values) / len(values)
    assert abs(mean) < 1e-9


def check_experiment(tmp, rng):
    paths = []
    for s in range(3):
        for label, freq in enumerate([10.0, 20.0]):
            rid = f"s{s}r{label}"
            path = os.path.join(tmp, rid + ".edf")
            synth_record(rid, f"s{s}", freq, 10, rng).write_edf(path)
            paths.append(f"    - {{path: {path!r}, subject_id: s{s}, label: {label}}}")
    out = os.path.join(tmp, "out")
    text = "\n".join(
        [
            "common: {seed: 3, output_dir: %r, log_level: warn}" % out,
            "dataset:",
            "  paths:",
            *paths,
            "  offline_transforms: [{name: bandpass, low: 1, high: 40}, {name: zscore}]",
            "  epoch: {window: 2, stride: 1}",
            "  split: {mode: by_subject, fractions: {train: 0.67, valid: 0.33, test: 0}}",
            "model: {kind: mlp, input_dim: 512, hidden: [32], output_dim: 2}",
            "optimizer: {kind: adam, lr: 0.001}",
            "task: {type: classification, metrics: [accuracy, kappa]}",
            "trainer: {epochs: 3, batch_size: 32}",
            "",
        ]
    )
    cfg_path = os.path.join(tmp, "exp.yaml")
    with open(cfg_path, "w") as f:
        f.write(text)

    cfg = tyee.Config.load(cfg_path, ["optimizer.lr=0.002"])
    assert cfg.validate() == [], cfg.validate()
    assert cfg.to_dict()["optimizer"]["lr"] == 0.002

    ds = cfg.dataset()
    data, label, subject, record = ds[0]
    assert len(ds) == 6 * 9 and len(data) == 1 and len(data[0]) == 512
    assert label in (0, 1) and subject.startswith("s")

    report = cfg.run()
    assert os.path.isfile(os.path.join(out, "report"))
    again = cfg.evaluate(os.path.join(out, "checkpoints", "best.ckpt"))
    assert again["metrics"] == report["metrics"], (again, report)
    print("valid metrics:", report["metrics"])


def main():
    rng = random.Random(0)
    check_metrics()
    with tempfile.TemporaryDirectory() as tmp:
        check_record_io(tmp, rng)
        check_experiment(tmp, rng)
    print("tyee", tyee.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
