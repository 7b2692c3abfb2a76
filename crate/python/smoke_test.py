"""Smoke test for the recgoat extension module.

Build and install first:
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
"""
import json
import math
import tempfile

import recgoat


def main():
    cost = [[0.0, 2.0, 3.0], [2.0, 0.0, 1.0], [3.0, 1.0, 0.0]]
    u = [1 / 3] * 3
    plan, value, converged = recgoat.sinkhorn(cost, u, u, epsilon=0.01, max_iters=2000, tol=1e-9)
    assert converged
    assert abs(value - recgoat.exact_w1(cost)) < 1e-3, value
    for row in plan:
        assert abs(sum(row) - 1 / 3) < 1e-9

    assert recgoat.ndcg_at_k([5, 6, 7], [7], 10) == 1 / math.log2(4)
    assert recgoat.recall_at_k([0, 1, 2], [1, 9], 2) == 0.5
    assert recgoat.VARIANTS == ["id_only", "concat", "sum", "cmcl_only", "oat_only", "full"]

    try:
        recgoat.Config(json.dumps({"lambda_bogus": 1}))
        raise AssertionError("unknown key accepted")
    except ValueError as e:
        assert "lambda_bogus" in str(e)

    with tempfile.TemporaryDirectory() as out:
        cfg = recgoat.Config(json.dumps({
            "n_users": 60, "n_items": 40, "n_clusters": 3, "d_text": 12, "d_visual": 10,
            "d": 8, "heads": 2, "k_knn": 4, "batch_size": 64, "epochs": 2,
            "variant": "full", "out_dir": out,
        }))
        ck = recgoat.train(cfg)
        assert len(ck.user_repr) == 60 and len(ck.item_repr) > 0
        assert len(ck.recommend(0, k=5)) == 5
        # tensors are stored as f32, so compare a save/load round trip
        loaded = recgoat.Checkpoint.load(out + "/checkpoint")
        loaded.save(out + "/copy")
        assert recgoat.Checkpoint.load(out + "/copy").item_repr == loaded.item_repr
        assert max(abs(a - b) for a, b in zip(loaded.item_repr[0], ck.item_repr[0])) < 1e-5
        metrics = json.loads(recgoat.evaluate(cfg))
        assert 0.0 <= metrics["recall@10"] <= 1.0

        cfg = recgoat.Config(json.dumps({"distance_trials": 5, "preference_trials": 2, "out_dir": out}))
        passed, reports = recgoat.verify_bounds(cfg)
        assert passed
        assert all(r["holds"] for r in json.loads(reports) if r["name"] == "distance_bound")

    print("smoke test passed")


if __name__ == "__main__":
    main()
