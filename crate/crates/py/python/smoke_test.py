"""Smoke test for the `nor` Python module: synthesize data, train briefly,
then exercise the model and metric bindings."""

import math
import tempfile
from pathlib import Path

import nor


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        out = Path(tmp) / "run"
        nor.synthesize(str(data), n=8, size=32)

        result = nor.train(
            str(data), str(out), preset="desk", max_epochs=2, validation_size=2, test_size=2, candidates=3, seed=3
        )
        assert Path(result["checkpoint"]).is_file(), result
        assert 1 <= result["best_epoch"] <= 2

        model = nor.Model.load(result["checkpoint"])
        assert len(model.tops) == 8 and len(model.bottoms) == 8

        p = model.match_score("t000", "b000")
        assert 0.0 < p < 1.0, p

        ranked = model.rank("t000", ["b003", "b000", "b001"])
        assert sorted(item for item, _ in ranked) == ["b000", "b001", "b003"]
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)
        assert math.isclose(dict(ranked)["b000"], p, rel_tol=0, abs_tol=1e-12)

        comment, score = model.generate("t001", "b002", beam=2, max_len=8)
        assert isinstance(comment, str) and score <= 0.0
        assert len(comment.split()) <= 8

        try:
            model.match_score("t999", "b000")
        except ValueError as e:
            assert "t999" in str(e)
        else:
            raise AssertionError("unknown item accepted")

    assert nor.tokenize("Love it!") == ["love", "it", "!"]
    assert math.isclose(nor.average_precision([True, False, True]), 5 / 6)
    assert nor.reciprocal_rank([False, True]) == 0.5
    assert nor.auc([0.9, 0.5, 0.95], [True, False, False]) == 0.5
    r = nor.rouge("the cat sat", ["the cat ran"])
    assert math.isclose(r["1"][2], 2 / 3) and math.isclose(r["2"][2], 0.5)
    assert math.isclose(nor.bleu("a b c d", ["a b c d"]), 1.0)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
