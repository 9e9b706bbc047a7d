import copy
import json
import pathlib

import numpy as np
import pytest
from marshmallow import ValidationError

from regime_hjm.config import ModelConfigSchema
from regime_hjm.config import is_manifest
from regime_hjm.config import load_config
from regime_hjm.dynamics import AffineSqrtVol
from regime_hjm.dynamics import CovarianceVol
from regime_hjm.dynamics import ExplicitVol


configs_dir = pathlib.Path(__file__).parent.parent / "configs"


def document(name):
    return json.loads((configs_dir / f"{name}.json").read_text())


def test_energy_document_builds_params():
    config = ModelConfigSchema().load(document("energy_two_regimes"))
    params = config.params
    assert (params.n, params.d) == (2, 2)
    np.testing.assert_array_equal(params.u0, [[0.9, 0.3], [0.6, 0.2]])
    np.testing.assert_array_equal(params.beta[0], [[0.0, 0.3], [0.0, 0.05]])
    np.testing.assert_array_equal(params.beta[1, 0], [-0.9, 0.0])
    assert isinstance(config.spec.vol, AffineSqrtVol)
    assert config.spec.z0 == 0
    assert config.verify["residual_tol"] == 1e-6


def test_rates_document_builds_params():
    config = ModelConfigSchema().load(document("rates_two_regimes"))
    params = config.params
    np.testing.assert_array_equal(params.A0, np.zeros((2, 2, 2)))
    assert isinstance(config.spec.vol, CovarianceVol)
    assert config.verify["contracts"] == ["P[3]"]
    assert config.verify["residual_tol"] == 1e-5


def test_defaults_are_filled_in():
    doc = document("energy_quiet")
    del doc["grid"], doc["sim"], doc["verify"]
    config = ModelConfigSchema().load(doc)
    assert config.grid_settings == {"x_max": 10.0, "x_step": 1e-3, "richardson": True}
    assert len(config.grid) == 10001
    assert config.sim["dt"] == 1e-3
    assert config.seed == 0
    assert config.verify["checkpoints"] == [0.5, 1.0]
    assert config.verify["contracts"] == ["F[2,3]"]
    assert isinstance(config.spec.vol, ExplicitVol)


def broken(name, **changes):
    doc = copy.deepcopy(document(name))
    for key, value in changes.items():
        if value is None:
            del doc[key]
        else:
            doc[key] = value
    return doc


def lambda_terms(**changes):
    term = dict(document("rates_rotation")["lambda_terms"][0])
    term.update(changes)
    return [term]


@pytest.mark.parametrize("doc,field", [
    (broken("energy_two_regimes", q_matrix=[[-1.0, 0.5], [2.0, -2.0]]), "q_matrix"),
    (broken("energy_two_regimes", q_matrix=[[1.0, -1.0], [2.0, -2.0]]), "q_matrix"),
    (broken("energy_two_regimes", market="gas"), "market"),
    (broken("energy_two_regimes", discount_r=None), "discount_r"),
    (broken("energy_two_regimes", discount_r=-0.1), "discount_r"),
    (broken("energy_two_regimes", z0=3), "z0"),
    (broken("energy_two_regimes", y0=[0.1]), "y0"),
    (broken("energy_two_regimes", beta_lin=[[1.0, "a"], [0.0, 0.0]]), "beta_lin"),
    (broken("energy_two_regimes", beta_lin=[[1.0], [0.0, 0.0]]), "beta_lin"),
    (broken("energy_two_regimes", vol={"family": "explicit"}), "vol"),
    (broken("energy_two_regimes", vol={"family": "covariance"}), "vol"),
    (broken("energy_two_regimes", A0=[[1.0, 0.0], [0.0, 1.0]]), "A0"),
    (broken("energy_two_regimes", colour="red"), "colour"),
    (broken("rates_two_regimes", vol={"family": "explicit", "sigma": [[1.0, 0.0], [0.0, 1.0]]}), "vol"),
    (broken("rates_two_regimes", u0=None), "u0"),
    (broken("energy_quiet", grid={"x_max": 1.0, "x_step": 0.3}), "grid"),
    (broken("energy_quiet", sim={"n_paths": 0}), "sim"),
    (broken("rates_rotation", lambda_terms=lambda_terms(monomials=[[0, 0, 1]], coefficients=[[0.1]])), "lambda_terms"),
    (broken("rates_rotation", lambda_terms=lambda_terms(coefficients=[[0.01]])), "lambda_terms"),
    (broken("rates_rotation", lambda_terms=lambda_terms(monomials=[[0, 0], [2]])), "lambda_terms"),
], ids=[
    "row_sum", "negative_intensity", "market", "no_discount", "negative_discount", "z0",
    "y0", "not_numbers", "ragged", "vol_missing_sigma", "energy_covariance", "energy_A0",
    "unknown_key", "rates_explicit_vol", "rates_no_u0", "grid_steps", "no_paths",
    "lambda_monomial_width", "lambda_coefficient_count", "lambda_ragged_monomials",
])
def test_invalid_documents(doc, field):
    with pytest.raises(ValidationError) as excinfo:
        ModelConfigSchema().load(doc)
    assert field in excinfo.value.messages


def test_row_sum_message_names_the_row():
    with pytest.raises(ValidationError) as excinfo:
        ModelConfigSchema().load(broken("energy_two_regimes", q_matrix=[[-1.0, 0.5], [2.0, -2.0]]))
    assert "row 1" in str(excinfo.value.messages["q_matrix"])


def test_dimension_mismatch_is_a_validation_error():
    doc = broken("energy_two_regimes", q_matrix=[[0.0]])
    with pytest.raises(ValidationError):
        ModelConfigSchema().load(doc)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(document("energy_quiet")))
    config = load_config(path, seed=17, n_paths=3)
    assert config.seed == 17
    assert config.sim["n_paths"] == 3
    assert config.source["sim"]["seed"] == 17
    assert json.loads(path.read_text())["sim"]["seed"] == 0


def test_load_config_from_manifest(tmp_path):
    doc = document("energy_quiet")
    manifest = {"tool": {"name": "regime-hjm"}, "config": doc, "seed": 0}
    assert is_manifest(manifest)
    path = tmp_path / "build_manifest.json"
    path.write_text(json.dumps(manifest))
    config = load_config(path)
    assert config.source == doc
    assert config.sha256 == load_config(configs_dir / "energy_quiet.json").sha256


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"], ids=["syntax", "not_an_object"])
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ValidationError):
        load_config(path)
