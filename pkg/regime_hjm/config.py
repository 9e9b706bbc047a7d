"""
Model config: one JSON document, validated by ModelConfigSchema.

Regimes are numbered from 1 in the document (z0) and from 0 everywhere in
the library.
"""
import copy
import hashlib
import json
import logging

import numpy as np
from marshmallow import RAISE
from marshmallow import Schema
from marshmallow import ValidationError
from marshmallow import post_load
from marshmallow import validates_schema
from marshmallow.fields import Boolean
from marshmallow.fields import Float
from marshmallow.fields import Integer
from marshmallow.fields import List
from marshmallow.fields import Nested
from marshmallow.fields import Raw
from marshmallow.fields import String
from marshmallow.validate import OneOf
from marshmallow.validate import Range
from marshmallow.validate import Validator

from regime_hjm.dynamics import AffineDrift
from regime_hjm.dynamics import AffineSqrtVol
from regime_hjm.dynamics import CovarianceVol
from regime_hjm.dynamics import DiffusionSpec
from regime_hjm.dynamics import ExplicitVol
from regime_hjm.dynamics import RateDrift
from regime_hjm.energy_curves import EnergyCurveParams
from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import make_grid
from regime_hjm.linalg_core import per_regime
from regime_hjm.market import MARKETS
from regime_hjm.market import ForwardCurveModel
from regime_hjm.noarb import ENERGY_RESIDUAL_TOL
from regime_hjm.noarb import RATES_RESIDUAL_TOL
from regime_hjm.rate_curves import LambdaTerm
from regime_hjm.rate_curves import RateCurveParams
from regime_hjm.regime import GeneratorError
from regime_hjm.regime import validate_generator


log = logging.getLogger(__name__)

DEFAULT_CONTRACTS = {"energy": ["F[2,3]"], "rates": ["P[3]"]}
DEFAULT_RESIDUAL_TOL = {"energy": ENERGY_RESIDUAL_TOL, "rates": RATES_RESIDUAL_TOL}


class Array(Validator):
    """rectangular nested lists of finite numbers"""

    def __init__(self, *ranks):
        self.ranks = ranks

    def __call__(self, value):
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("must be a rectangular array of numbers")
        if arr.ndim not in self.ranks:
            allowed = " or ".join(map(str, self.ranks))
            raise ValidationError(f"must be an array with {allowed} axes, got {arr.ndim}")
        if not np.isfinite(arr).all():
            raise ValidationError("entries must be finite")
        return value


class GridSchema(Schema):
    x_max = Float(load_default=10.0, validate=Range(min=0, min_inclusive=False))
    x_step = Float(load_default=1e-3, validate=Range(min=0, min_inclusive=False))
    richardson = Boolean(load_default=True)

    @validates_schema
    def check_steps(self, data, **kwargs):
        steps = data["x_max"] / data["x_step"]
        if abs(steps - round(steps)) > 1e-9 * max(1, steps):
            raise ValidationError("x_max must be a whole multiple of x_step", "x_step")


class SimSchema(Schema):
    dt = Float(load_default=1e-3, validate=Range(min=0, min_inclusive=False))
    horizon = Float(load_default=1.0, validate=Range(min=0, min_inclusive=False))
    n_paths = Integer(load_default=1000, validate=Range(min=1))
    seed = Integer(load_default=0, validate=Range(min=0))
    batch_size = Integer(load_default=2048, validate=Range(min=1))


class VerifySchema(Schema):
    n_probes = Integer(load_default=200, validate=Range(min=1))
    x_probe_max = Float(load_default=5.0, validate=Range(min=0, min_inclusive=False))
    contracts = List(String(), load_default=None)
    checkpoints = List(Float(validate=Range(min=0)), load_default=lambda: [0.5, 1.0])
    residual_tol = Float(load_default=None, validate=Range(min=0, min_inclusive=False))
    z_max = Float(load_default=4.0, validate=Range(min=0, min_inclusive=False))
    se_floor = Float(load_default=1e-6, validate=Range(min=0))


class VolSchema(Schema):
    family = String(required=True, validate=OneOf(["explicit", "affine-sqrt", "covariance"]))
    sigma = Raw(validate=Array(2, 3))
    sigma0 = Raw(validate=Array(2, 3))
    sigma_sqrt = Raw(validate=Array(3, 4))

    @validates_schema
    def check_family(self, data, **kwargs):
        needed = {"explicit": "sigma", "affine-sqrt": "sigma_sqrt"}.get(data["family"])
        if needed and needed not in data:
            raise ValidationError(f"required for the {data['family']} family", needed)


class LambdaTermSchema(Schema):
    b = List(Float(), required=True)
    a = Raw(required=True, validate=Array(2))
    monomials = List(List(Integer(validate=Range(min=0))), required=True)
    coefficients = Raw(required=True, validate=Array(2))

    @post_load
    def make_term(self, data, **kwargs):
        try:
            return LambdaTerm(**data)
        except (DimensionError, DomainError) as err:
            raise ValidationError(str(err)) from err


def _section(schema):
    return lambda: schema().load({})


class ModelConfigSchema(Schema):
    market = String(required=True, validate=OneOf(MARKETS))
    description = String()
    n = Integer(required=True, validate=Range(min=1))
    d = Integer(required=True, validate=Range(min=1))
    q_matrix = Raw(required=True, validate=Array(2))
    discount_r = Float(validate=Range(min=0, min_inclusive=False))
    beta0 = Raw(required=True, validate=Array(1, 2))
    beta_lin = Raw(required=True, validate=Array(2, 3))
    A0 = Raw(validate=Array(2, 3))
    A_lin = Raw(validate=Array(3))
    lambda_terms = List(Nested(LambdaTermSchema), load_default=list)
    vol = Nested(VolSchema)
    u0 = Raw(required=True, validate=Array(1, 2))
    c0 = List(Float(), required=True)
    y0 = List(Float(), required=True)
    z0 = Integer(load_default=1, validate=Range(min=1))
    grid = Nested(GridSchema, load_default=_section(GridSchema))
    sim = Nested(SimSchema, load_default=_section(SimSchema))
    verify = Nested(VerifySchema, load_default=_section(VerifySchema))

    class Meta:
        unknown = RAISE

    @validates_schema
    def check_market(self, data, **kwargs):
        if data["z0"] > data["n"]:
            raise ValidationError(f"initial regime must be in 1..{data['n']}", "z0")
        if len(data["y0"]) != data["d"]:
            raise ValidationError(f"need {data['d']} initial factor values", "y0")
        if data["market"] == "energy":
            if "discount_r" not in data:
                raise ValidationError("energy models need a discount rate", "discount_r")
            if "vol" not in data or data["vol"]["family"] == "covariance":
                raise ValidationError("energy models need an explicit or affine-sqrt volatility", "vol")
            for name in "A0", "A_lin":
                if name in data:
                    raise ValidationError("only rates models take diffusion blocks", name)
            if data["lambda_terms"]:
                raise ValidationError("only rates models take lambda terms", "lambda_terms")
        elif data.get("vol", {}).get("family", "covariance") != "covariance":
            raise ValidationError("rates models take their volatility from the A blocks (family 'covariance')", "vol")

    @post_load
    def make_config(self, data, **kwargs):
        try:
            return ModelConfig(data)
        except GeneratorError as err:
            raise ValidationError(str(err), "q_matrix") from err
        except (DimensionError, DomainError) as err:
            raise ValidationError(str(err)) from err


class ModelConfig:
    """a validated config with the parameter objects built from it"""

    def __init__(self, data):
        self.data = data
        self.market = data["market"]
        n, d = data["n"], data["d"]
        Q = validate_generator(data["q_matrix"])
        if Q.n != n:
            raise DimensionError(f"q_matrix is {Q.n}x{Q.n} but n={n}")
        beta0 = per_regime(data["beta0"], n, (d,), "beta0")
        if self.market == "energy":
            beta_lin = per_regime(data["beta_lin"], n, (d, d), "beta_lin")
            beta = np.concatenate([beta0[None], beta_lin.transpose(1, 0, 2)])
            u0 = per_regime(data["u0"], n, (d,), "u0").T
            self.params = EnergyCurveParams(data["discount_r"], Q, beta, u0, data["c0"])
            drift = AffineDrift.from_energy(self.params)
        else:
            A0 = per_regime(data.get("A0", np.zeros((d, d))), n, (d, d), "A0")
            A_lin = data.get("A_lin", np.zeros((d, d, d)))
            self.params = RateCurveParams(Q, data["u0"], data["c0"], data["beta_lin"], A_lin, beta0, A0, data["lambda_terms"])
            if self.params.d != d:
                raise DimensionError(f"u0 has {self.params.d} entries but d={d}")
            drift = RateDrift(self.params)
        self.spec = DiffusionSpec(drift, self._vol(data.get("vol"), n, d), data["y0"], data["z0"] - 1)
        self.grid_settings = data["grid"]
        self.grid = make_grid(data["grid"]["x_max"], data["grid"]["x_step"])
        self.sim = data["sim"]
        self.verify = dict(data["verify"])
        if self.verify["contracts"] is None:
            self.verify["contracts"] = DEFAULT_CONTRACTS[self.market]
        if self.verify["residual_tol"] is None:
            self.verify["residual_tol"] = DEFAULT_RESIDUAL_TOL[self.market]
        self.source = None

    def _vol(self, vol, n, d):
        if self.market == "rates":
            return CovarianceVol(self.params)
        if vol["family"] == "explicit":
            return ExplicitVol(vol["sigma"], n)
        sigma0 = vol.get("sigma0", np.zeros((d, d)))
        return AffineSqrtVol(sigma0, vol["sigma_sqrt"], n)

    @property
    def seed(self):
        return self.sim["seed"]

    @property
    def sha256(self):
        text = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def build_model(self, grid=None):
        grid = self.grid if grid is None else grid
        if self.market == "energy":
            return ForwardCurveModel.energy(self.params, grid)
        return ForwardCurveModel.rates(self.params, grid)


def is_manifest(document):
    return isinstance(document, dict) and "tool" in document and "config" in document


def load_config(path, seed=None, n_paths=None):
    """read a config (or a run manifest) and apply command-line overrides"""
    with open(path) as f:
        try:
            document = json.load(f)
        except ValueError as err:
            raise ValidationError(f"{path} is not valid JSON: {err}")
    if not isinstance(document, dict):
        raise ValidationError(f"{path} must hold a JSON object")
    if is_manifest(document):
        log.info("reusing the config embedded in manifest %s", path)
        document = document["config"]
    document = copy.deepcopy(document)
    if seed is not None:
        document.setdefault("sim", {})["seed"] = seed
    if n_paths is not None:
        document.setdefault("sim", {})["n_paths"] = n_paths
    config = ModelConfigSchema().load(document)
    config.source = document
    return config
