"""Scenario configuration files.

One TOML document per scenario with sections ``[graph]``,
``[reference_model]``, ``[consensus]``, ``[sim]``, optional per-agent
plant sections ``[agents.<i>]`` and an optional ``[verify]`` section with
scenario-specific check thresholds.  A top-level ``format = 1`` field
guards future evolution.  All structural and model assumptions are
validated eagerly at load with field-precise errors.
"""
from __future__ import annotations

import numpy as np

try:
    import tomllib as _toml
except ImportError:                      # Python < 3.11
    import tomli as _toml

from .consensus import ReferenceModelSpec, design_consensus
from .errors import NotStronglyConnected, ParseError, ValidationError
from .graph import DirectedGraph, GraphSpectra, is_strongly_connected
from .models import resolve_generator_stages, resolve_kappa, resolve_model
from .regulation import RegulationPlant, build_generator, make_linear_sigma
from .sim import PlantInit, Scenario

FORMAT_VERSION = 1


_REQUIRED = object()


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ParseError(f"missing required section [{name}]")
    sec = doc[name]
    if not isinstance(sec, dict):
        raise ParseError(f"[{name}] must be a section")
    return sec


def _field(sec: dict, section: str, key: str, default=_REQUIRED):
    if key not in sec:
        if default is _REQUIRED:
            raise ParseError(f"missing required field '{key}' in [{section}]")
        return default
    return sec[key]


def _num(sec, section, key, default=_REQUIRED) -> float:
    val = _field(sec, section, key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"[{section}].{key} must be a number, got {val!r}")
    return float(val)


def _array(sec, section, key, shape=None) -> np.ndarray:
    val = _field(sec, section, key)
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"[{section}].{key} must be a numeric array") from None
    if shape is not None and arr.shape != shape:
        raise ParseError(f"[{section}].{key} must have shape {shape}, "
                         f"got {arr.shape}")
    return arr


def parse_config(text: bytes | str, name: str = "scenario",
                 overrides: dict | None = None) -> Scenario:
    """Parse and fully validate one scenario document.

    ``overrides`` may carry ``horizon``, ``step`` and ``unchecked`` from the
    command line; they are applied before validation and recorded on the
    returned scenario so a rerun from emitted files is exact.
    """
    raw = text.encode() if isinstance(text, str) else text
    overrides = dict(overrides or {})
    try:
        doc = _toml.loads(raw.decode())
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"malformed config: {exc}") from exc

    if doc.get("format") != FORMAT_VERSION:
        raise ValidationError(
            f"config format must be {FORMAT_VERSION}, got {doc.get('format')!r}")

    # --- graph ---------------------------------------------------------
    gsec = _section(doc, "graph")
    weights = _array(gsec, "graph", "weights")
    try:
        graph = DirectedGraph(weights)
    except ValueError as exc:
        raise ValidationError(f"[graph].weights: {exc}") from exc
    if not is_strongly_connected(graph):
        raise NotStronglyConnected(
            "[graph].weights: the communication graph must be strongly "
            "connected (a directed path from every node to every other node)")
    spectra = GraphSpectra.from_graph(graph)
    n = graph.n

    # --- reference model --------------------------------------------------
    msec = _section(doc, "reference_model")
    A = _array(msec, "reference_model", "A")
    B = _array(msec, "reference_model", "B")
    model = ReferenceModelSpec(A=A, B=B)
    c_row = _array(msec, "reference_model", "c", shape=(model.q,))

    def output_map(v, _row=c_row):
        return float(_row @ np.asarray(v, dtype=float))

    # --- consensus design ------------------------------------------------
    csec = _section(doc, "consensus")
    unchecked = bool(_field(csec, "consensus", "unchecked", False))
    if overrides.get("unchecked"):
        unchecked = True
    beta_override = csec.get("beta")
    if beta_override is not None:
        beta_override = _num(csec, "consensus", "beta")
    design = design_consensus(
        model, spectra,
        lam=_num(csec, "consensus", "lambda"),
        eta_i=_array(csec, "consensus", "eta_i", shape=(n,)),
        eta=_num(csec, "consensus", "eta"),
        phi=_num(csec, "consensus", "phi"),
        g=_array(csec, "consensus", "g", shape=(n,)),
        unchecked=unchecked,
        beta_override=beta_override)

    # --- plants (optional, all agents or none) -----------------------------
    plants: list[RegulationPlant] = []
    plant_init: list[PlantInit] = []
    if "agents" in doc:
        asec = doc["agents"]
        missing = [str(i + 1) for i in range(n) if str(i + 1) not in asec]
        if missing:
            raise ValidationError(
                f"[agents] must cover every agent 1..{n}; missing {missing}")
        extra = [k for k in asec if k not in {str(i + 1) for i in range(n)}]
        if extra:
            raise ValidationError(f"[agents] has unknown entries {extra}")
        generators: dict[str, object] = {}
        for i in range(n):
            sec_name = f"agents.{i + 1}"
            psec = asec[str(i + 1)]
            model_name = _field(psec, sec_name, "model")
            agent_model = resolve_model(model_name)
            gen_name = _field(psec, sec_name, "generator", model_name)
            if gen_name not in generators:
                generators[gen_name] = build_generator(
                    resolve_generator_stages(gen_name))
            generator = generators[gen_name]
            kappa_name = _field(psec, sec_name, "kappa", "cubic")
            kappa, kappa_grad = resolve_kappa(kappa_name)
            sigma = make_linear_sigma(_num(psec, sec_name, "c_frac"),
                                      _num(psec, sec_name, "gamma0"))
            w = _num(psec, sec_name, "w")
            plants.append(RegulationPlant(
                agent=i, model=agent_model, generator=generator, w=w,
                kappa=kappa, kappa_grad=kappa_grad, sigma=sigma))
            _check_output_map(agent_model, c_row, i)
            z0 = _array(psec, sec_name, "z0", shape=(agent_model.m,))
            x0 = _array(psec, sec_name, "x0", shape=(agent_model.r,))
            eta_dims = generator.eta_dims
            eta0_raw = psec.get("eta0")
            if eta0_raw is None:
                eta0 = [np.zeros(d) for d in eta_dims]
            else:
                if len(eta0_raw) != len(eta_dims):
                    raise ValidationError(
                        f"[{sec_name}].eta0 needs {len(eta_dims)} blocks")
                eta0 = [np.array(block, dtype=float) for block in eta0_raw]
                for blk, d in zip(eta0, eta_dims):
                    if blk.shape != (d,):
                        raise ValidationError(
                            f"[{sec_name}].eta0 blocks must match the "
                            f"compensator dimensions {eta_dims}")
            plant_init.append(PlantInit(z0=z0, x0=x0, eta0=eta0))

    # --- sim ------------------------------------------------------------------
    ssec = _section(doc, "sim")
    horizon = overrides.get("horizon")
    if horizon is None:
        horizon = _num(ssec, "sim", "horizon")
    step = overrides.get("step")
    if step is None:
        step = _num(ssec, "sim", "step")
    seed = int(_num(ssec, "sim", "seed", 0.0))
    if "v0" in ssec:
        v0 = _array(ssec, "sim", "v0", shape=(n, model.q))
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.uniform(-1.0, 1.0, size=(n, model.q))

    verify_cfg = dict(doc.get("verify", {}))

    scn = Scenario(graph=graph, model=model, spectra=spectra, design=design,
                   plants=plants, plant_init=plant_init, v0=v0,
                   horizon=float(horizon), step=float(step),
                   output_map=output_map if plants else None,
                   seed=seed, name=name, verify_cfg=verify_cfg,
                   source=raw, overrides=overrides)
    scn.validate()
    return scn


def _check_output_map(agent_model, c_row: np.ndarray, agent: int) -> None:
    """The per-plant tracked-output map must agree with the shared one."""
    probes = [np.ones_like(c_row)]
    probes += [np.eye(c_row.shape[0])[k] for k in range(c_row.shape[0])]
    for p in probes:
        if abs(float(agent_model.c(p)) - float(c_row @ p)) > 1e-9:
            raise ValidationError(
                f"[agents.{agent + 1}]: model '{agent_model.name}' tracks a "
                "different output map than [reference_model].c")


def load_config(path, overrides: dict | None = None) -> Scenario:
    from pathlib import Path
    p = Path(path)
    return parse_config(p.read_bytes(), name=p.stem, overrides=overrides)
