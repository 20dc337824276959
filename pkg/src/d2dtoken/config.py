"""Model-instance config files.

A config is a YAML (or JSON; JSON is a YAML subset) mapping with the model
scalars plus one entry per non-idle traffic type.  Each type either states
its benefit directly or derives it from link qualities through the MOS
curves.  Types are re-indexed in ascending benefit order on load, so index 1
is always the least beneficial type regardless of file order.

Example, direct benefits::

    discount: 0.99
    cost: 1.0
    token_cap: 20
    p_recv: 0.5
    q_accept: 0.5
    idle_prob: 0.2
    traffic:
      - {label: s1, prob: 0.2, benefit: 3}
      - {label: s2, prob: 0.2, benefit: 4}

Example, MOS-derived benefits::

    mos: {b1: 1, b2: 5, b3: 2.6949, b4: 0.0235, log_base: natural}
    traffic:
      - label: video
        prob: 0.2
        kind: video
        d2d: {psnr: 10}
        cellular: {psnr: 5}
      - label: elastic
        prob: 0.5
        kind: elastic
        d2d: {throughput: 1500}
        cellular: {throughput: 1000}
    ...
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .model import InvalidModelError, MdpModel, make_model, validate
from .mos import ELASTIC, VIDEO, LinkQuality, MosParams

_REQUIRED_SCALARS = ("discount", "cost", "token_cap", "p_recv", "q_accept", "idle_prob")


@dataclass(frozen=True)
class LoadedModel:
    """A validated model plus everything needed to reproduce and report it."""

    model: MdpModel
    mos_params: Optional[MosParams]
    benefit_provenance: List[Dict[str, Any]]
    resolved: Dict[str, Any]


class ConfigError(ValueError):
    """Config file missing, unparseable, or structurally wrong."""


def _link_quality(raw: Dict[str, Any], where: str) -> LinkQuality:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping with psnr and/or throughput")
    return LinkQuality(
        psnr=float(raw.get("psnr", 0.0)),
        throughput=float(raw.get("throughput", 1.0)),
    )


def _derive_benefit(entry: Dict[str, Any], params: MosParams, label: str) -> Dict[str, Any]:
    from .mos import benefit_from_mos  # local import keeps module load light

    kind = entry["kind"]
    if kind not in (VIDEO, ELASTIC):
        raise ConfigError(f"traffic type {label!r}: kind must be 'video' or 'elastic'")
    d2d = _link_quality(entry.get("d2d", {}), f"traffic type {label!r} d2d")
    cell = _link_quality(entry.get("cellular", {}), f"traffic type {label!r} cellular")
    benefit = benefit_from_mos(params, d2d, cell, kind)
    quality_key = "psnr" if kind == VIDEO else "throughput"
    return {
        "label": label,
        "kind": kind,
        "d2d_" + quality_key: getattr(d2d, quality_key),
        "cellular_" + quality_key: getattr(cell, quality_key),
        "log_base": params.log_base,
        "benefit": benefit,
    }


def load_model(path: str | Path, log_base: str | None = None) -> LoadedModel:
    """Load, derive benefits if needed, validate, and echo the resolved instance.

    ``log_base`` overrides the config's MOS log base (command-line hook).
    Raises ConfigError for structural problems and InvalidModelError when the
    resulting instance violates a model invariant.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return build_model(raw, log_base=log_base)


def build_model(raw: Dict[str, Any], log_base: str | None = None) -> LoadedModel:
    """Same as load_model but from an already-parsed mapping."""
    missing = [k for k in _REQUIRED_SCALARS if k not in raw]
    if missing:
        raise ConfigError(f"config missing required keys: {', '.join(missing)}")
    entries = raw.get("traffic")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("config needs a non-empty 'traffic' list")

    mos_params: Optional[MosParams] = None
    mos_raw = raw.get("mos")
    needs_mos = any("kind" in e for e in entries if isinstance(e, dict))
    if mos_raw is not None or needs_mos or log_base is not None:
        mos_kwargs = dict(mos_raw or {})
        if log_base is not None:
            mos_kwargs["log_base"] = log_base
        try:
            mos_params = MosParams(**mos_kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad mos parameters: {exc}") from exc

    provenance: List[Dict[str, Any]] = []
    typed: List[Dict[str, Any]] = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"traffic entry {i} must be a mapping")
        label = str(entry.get("label", f"type{i + 1}"))
        if "prob" not in entry:
            raise ConfigError(f"traffic type {label!r} missing 'prob'")
        if "benefit" in entry:
            record = {"label": label, "benefit": float(entry["benefit"]), "kind": "direct"}
        elif "kind" in entry:
            if mos_params is None:
                raise ConfigError("traffic types with 'kind' need a 'mos' section")
            record = _derive_benefit(entry, mos_params, label)
        else:
            raise ConfigError(f"traffic type {label!r} needs 'benefit' or 'kind'")
        provenance.append(record)
        typed.append({"label": label, "prob": float(entry["prob"]), "benefit": record["benefit"]})

    # model indices follow ascending benefit, whatever the file order was
    typed.sort(key=lambda e: e["benefit"])
    model = make_model(
        benefits=[e["benefit"] for e in typed],
        stationary=[float(raw["idle_prob"])] + [e["prob"] for e in typed],
        cost=float(raw["cost"]),
        discount=float(raw["discount"]),
        token_cap=int(raw["token_cap"]),
        p_recv=float(raw["p_recv"]),
        q_accept=float(raw["q_accept"]),
        labels=[e["label"] for e in typed],
    )
    report = validate(model)
    if not report.ok:
        raise InvalidModelError("; ".join(report.issues))

    resolved: Dict[str, Any] = {
        "discount": model.discount,
        "cost": model.cost,
        "token_cap": model.token_cap,
        "p_recv": model.env.p_recv,
        "q_accept": model.env.q_accept,
        "idle_prob": model.traffic.stationary[0],
        "labels": [t.label for t in model.traffic.types[1:]],
        "probs": list(model.traffic.stationary[1:]),
        "benefits": list(model.traffic.benefits),
    }
    if mos_params is not None:
        resolved["mos"] = {
            "b1": mos_params.b1,
            "b2": mos_params.b2,
            "b3": mos_params.b3,
            "b4": mos_params.b4,
            "log_base": mos_params.log_base,
        }
    return LoadedModel(
        model=model,
        mos_params=mos_params,
        benefit_provenance=provenance,
        resolved=resolved,
    )
