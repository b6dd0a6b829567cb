"""Trains a small model through the bindings and checks predictions survive a save/load round trip."""

import json
import sys
import tempfile

import bddtext


def main() -> int:
    data = bddtext.synth(multi_label=False, n_unlabeled=200, seed=3)
    cfg = json.loads(bddtext.default_config("mcc-s"))
    cfg.update(warmup_epochs=5, epochs=2, inner_loops=20, hidden=32, repr_dim=16)
    model = bddtext.train(json.dumps(cfg), data["labeled"], data["unlabeled"], data["dev"])

    texts = [text for _, text, _ in data["test"][:20]]
    predicted = model.predict(texts)
    assert len(predicted) == len(texts)
    assert all(len(p) == 1 and p[0] in model.labels for p in predicted)
    for row in model.scores(texts):
        assert abs(sum(row) - 1.0) < 1e-9

    report = model.evaluate(data["test"])
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert model.metrics_csv().count("\n") == cfg["epochs"] + 1

    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        back = bddtext.Model.load(d)
        assert back.predict(texts) == predicted
        assert back.scores(texts) == model.scores(texts)

    try:
        bddtext.default_config("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mode accepted")

    print(f"ok: test macro-F1 {report['macro_f1']:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
