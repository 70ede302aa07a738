"""Smoke test for the biasloom Python extension.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import json

import biasloom


def main():
    assert abs(biasloom.apply_withdrawal_mix(0.08, 0.12, 0.191) - 0.08764) < 1e-12
    assert abs(biasloom.apply_swap_mix(0.5, 0.7, 0.2, 0.1) - 0.47) < 1e-12
    try:
        biasloom.apply_swap_mix(0.6, 0.3, 0.1, 0.2)
    except ValueError:
        pass
    else:
        raise AssertionError("incoherent swap pair accepted")

    shape = biasloom.BetaShape.from_mean_ess(0.2, 50.0)
    assert abs(shape.mean() - 0.2) < 1e-12 and abs(shape.ess() - 50.0) < 1e-9

    engine = biasloom.Engine()
    examples = biasloom.bundled_examples()
    study = examples["metoprolol.study.json"]

    pruned = json.loads(engine.prune(study))
    ids = sorted(b["id"] for b in pruned["active_biases"])
    assert "withdrawal_bias" in ids and "reporting_credibility" in ids, ids

    request = json.loads(examples["metoprolol.request.json"])
    request["resolution"] = 61
    body = json.dumps(request)
    first = engine.analyze(body)
    assert first == engine.run("analyze", body), "analysis is not deterministic"
    result = json.loads(first)
    assert result["decision"]["recommended"] == "treat", result["decision"]

    bad = study.replace('"reported_events": 84', '"reported_events": 900', 1)
    try:
        engine.validate(bad)
    except biasloom.EngineError as e:
        assert e.code == "validation_error" and e.field_path == "arms[0].reported_events", (e.code, e.field_path)
        assert e.exit_code == 2
    else:
        raise AssertionError("invalid study accepted")

    kb = json.loads(engine.kb())
    assert len(kb["entries"]) >= 10
    print(f"biasloom {biasloom.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
