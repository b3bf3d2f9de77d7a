import numpy as np
import pytest
import torch

from intervene.evaluate import (
    aggregate,
    evaluate,
    intervention_label,
    load_samples,
    markdown_table,
    model_mean,
    read_rows,
    save_samples,
    write_rows,
)
from intervene.ivrep import InterventionQuery
from intervene.model import ModelConfig, init_model
from intervene.plots import scatter_instance
from intervene.scm import GAUSSIAN, CorpusConfig, generate_corpus


@pytest.fixture(scope="module")
def setup():
    corpus = generate_corpus(CorpusConfig(d=2, count=3, n_samples=12, family=GAUSSIAN), seed=0)
    model = init_model(ModelConfig(d=2, e=8, c=2, layers=2, decoder_blocks=1, heads=2, dropout=0.0), seed=0).eval()
    return corpus, model


def test_evaluate_rows_and_samples(setup):
    corpus, model = setup
    ev = evaluate(model, corpus.instances, (5.0,), n_perm=20, seed=1, keep_samples=True)
    assert len(ev.rows) == 3 * 2 * 2
    for r in ev.rows:
        assert r["method"] in ("baseline", "model")
        assert r["mmd"] >= 0 and r["wsd"] >= 0 and 0 < r["p"] <= 1
    group = ev.samples[corpus.instances[0].scm_id]
    assert group["model do(0)#1"].shape == (12, 2)
    assert np.all(group["baseline do(0)#1"][:, 0] == 5.0)
    again = evaluate(model, corpus.instances, (5.0,), n_perm=20, seed=1)
    assert again.rows == ev.rows


def test_aggregate_and_table(setup):
    corpus, model = setup
    rows = evaluate(model, corpus.instances[:1], (5.0,), n_perm=10).rows
    agg = aggregate(rows)
    assert set(agg) == {"baseline", "model"}
    assert agg["model"]["count"] == 2
    assert agg["model"]["mmd"] == pytest.approx(np.mean([r["mmd"] for r in rows if r["method"] == "model"]))
    table = markdown_table(agg, "t")
    assert "| model |" in table and "| baseline |" in table
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        evaluate(model, [], (5.0,))


def test_row_and_sample_files(setup, tmp_path):
    corpus, model = setup
    ev = evaluate(model, corpus.instances[:2], (5.0,), n_perm=10, keep_samples=True)
    csv_path, json_path = write_rows(ev.rows, tmp_path)
    assert csv_path.read_text().splitlines()[0] == "instance,intervention,method,mmd,wsd,erg,p"
    assert read_rows(json_path) == ev.rows
    back = load_samples(save_samples(ev.samples, tmp_path / "s.npz"))
    assert back.keys() == ev.samples.keys()
    for sid in back:
        for key in back[sid]:
            np.testing.assert_array_equal(back[sid][key], ev.samples[sid][key])


def test_model_mean_shape(setup):
    corpus, model = setup
    inst = corpus.instances[0]
    m = model_mean(model, inst.observational.values, inst.queries, n_latent=4, generator=torch.Generator().manual_seed(0))
    assert m.shape == (2, 2) and np.isfinite(m).all()


def test_labels():
    assert intervention_label(InterventionQuery(1, (0, 1, 1))) == "do(1,2)#1"


def test_scatter_is_byte_deterministic(setup, tmp_path):
    corpus, model = setup
    ev = evaluate(model, corpus.instances[:1], (5.0,), n_perm=5, keep_samples=True)
    group = next(iter(ev.samples.values()))
    a = scatter_instance(group, "x", tmp_path / "a")
    b = scatter_instance(group, "x", tmp_path / "b")
    assert [p.suffix for p in a] == [".png", ".svg"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
