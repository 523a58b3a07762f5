import numpy as np
import pytest

from cisrec import itemtree, modelio
from cisrec.baselines import BMFModel, BPRModel
from cisrec.cis import FlatModel, HierModel
from cisrec.errors import ConfigError, DataError, TreeFormatError


def _models(rng):
    tree = itemtree.random_balanced(6, arity=2, dim=3, seed=0, init_scale=0.5)
    return {
        "flat": FlatModel(rng.normal(size=(4, 3)), rng.normal(size=(6, 3)), rng.normal(size=6)),
        "hier": HierModel(rng.normal(size=(4, 3)), tree),
        "bpr": BPRModel(rng.normal(size=(4, 3)), rng.normal(size=(6, 3)), rng.normal(size=6), use_bias=False),
        "bmf": BMFModel(rng.normal(size=(4, 3)), rng.normal(size=(6, 3)), alpha=40.0, reg=0.1),
    }


@pytest.mark.parametrize("kind", ["flat", "hier", "bpr", "bmf"])
def test_saved_model_scores_identically(tmp_path, rng, kind):
    model = _models(rng)[kind]
    path = modelio.save_model(model, tmp_path / f"{kind}.json", {"config_hash": "h"})
    loaded = modelio.load_model(path)
    assert modelio.model_kind(loaded) == kind
    items = np.arange(6)
    assert np.array_equal(loaded.score_items(2, items), model.score_items(2, items))
    assert modelio.read_meta(path) == {"config_hash": "h"}


def test_hier_model_writes_tree_file(tmp_path, rng):
    model = _models(rng)["hier"]
    path = modelio.save_model(model, tmp_path / "cis-learned.json")
    tree_file = tmp_path / "cis-learned.tree.json"
    assert modelio.tree_path_for(path) == tree_file
    assert itemtree.deserialize(tree_file.read_bytes()).codes == model.tree.codes


def test_save_is_byte_stable(tmp_path, rng):
    model = _models(rng)["bpr"]
    first = modelio.save_model(model, tmp_path / "a.json", {"config_hash": "h"}).read_bytes()
    second = modelio.save_model(model, tmp_path / "b.json", {"config_hash": "h"}).read_bytes()
    assert first == second


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        modelio.load_model(tmp_path / "nothing.json")


def test_load_wrong_format(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other", "version": 1}')
    with pytest.raises(DataError):
        modelio.load_model(path)
    path.write_text("{broken")
    with pytest.raises(TreeFormatError):
        modelio.load_model(path)


def test_load_hier_without_tree(tmp_path, rng):
    path = modelio.save_model(_models(rng)["hier"], tmp_path / "m.json")
    modelio.tree_path_for(path).unlink()
    with pytest.raises(DataError):
        modelio.load_model(path)


def test_save_unknown_object(tmp_path):
    with pytest.raises(ConfigError):
        modelio.save_model(object(), tmp_path / "x.json")
