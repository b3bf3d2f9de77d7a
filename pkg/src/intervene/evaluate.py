"""Score model and baseline interventional estimates against ground truth."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .baseline import fit_mvn, sample_baseline
from .model import InterventionVAE, as_tensor, query_matrix, reparameterize
from .scm import TrainingInstance

METHODS = ("baseline", "model")
ROW_FIELDS = ("instance", "intervention", "method", "mmd", "wsd", "erg", "p")


@dataclass
class Evaluation:
    rows: list[dict]
    samples: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def aggregate(self) -> dict[str, dict[str, float]]:
        return aggregate(self.rows)


def intervention_label(query) -> str:
    targets = ",".join(str(t) for t in query.target_indices)
    return f"do({targets})#{query.value_index}"


def model_samples(model: InterventionVAE, obs, queries, n: int, generator: torch.Generator) -> np.ndarray:
    """Encode, draw one latent per query, decode, draw n points. Returns (k, n, d)."""
    model.eval()
    gm = model.predict(obs, queries, generator=generator)
    return gm.sample(n, generator).numpy()


@torch.no_grad()
def model_mean(model: InterventionVAE, obs, queries, n_latent: int = 64, generator: torch.Generator | None = None):
    """Mean of the estimated interventional distribution, averaging the mixture
    mean over ``n_latent`` latent draws. Returns (k, d)."""
    model.eval()
    data = as_tensor(obs)
    qmat = query_matrix(queries, model.cfg.num_values, data.shape[-1])
    post = model.encode(data.unsqueeze(0).expand(len(queries), *data.shape), qmat)
    total = torch.zeros(len(queries), data.shape[-1], dtype=data.dtype)
    for _ in range(n_latent):
        total += model.decode(reparameterize(post, generator), qmat).mean()
    return (total / n_latent).numpy()


def evaluate(
    model: InterventionVAE,
    instances: Sequence[TrainingInstance],
    intervention_values: Sequence[float],
    n_perm: int = metrics.DEFAULT_PERMUTATIONS,
    seed: int = 0,
    keep_samples: bool = False,
) -> Evaluation:
    """For every instance and intervention, draw as many points as the
    ground-truth dataset holds from the model and from the baseline, then
    compute MMD, Wasserstein, energy distance and the permutation p-value."""
    if not instances:
        raise ValueError("no instances to evaluate")
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    rows: list[dict] = []
    samples: dict[str, dict[str, np.ndarray]] = {}
    for inst in instances:
        obs = inst.observational.values
        queries = inst.queries
        n = inst.interventional[0].n
        est = model_samples(model, obs, queries, n, gen)
        fitted = fit_mvn(obs)
        kept = {"observational": obs}
        for k, ds in enumerate(inst.interventional):
            q = ds.query
            base = sample_baseline(fitted, q, intervention_values[q.value_index - 1], ds.n, rng)
            label = intervention_label(q)
            for method, x in (("baseline", base), ("model", est[k])):
                rep = metrics.compare(ds.values, x, n_perm, rng)
                rows.append(
                    {
                        "instance": inst.scm_id,
                        "intervention": label,
                        "method": method,
                        "mmd": rep.mmd,
                        "wsd": rep.wsd,
                        "erg": rep.erg,
                        "p": rep.p_value,
                    }
                )
            if keep_samples:
                kept[f"truth {label}"] = ds.values
                kept[f"baseline {label}"] = base
                kept[f"model {label}"] = est[k]
        if keep_samples:
            samples[inst.scm_id] = kept
    return Evaluation(rows, samples)


def aggregate(rows: Sequence[dict]) -> dict[str, dict[str, float]]:
    """Mean of each metric per method (p is the mean of per-pair p-values)."""
    if not rows:
        raise ValueError("cannot aggregate zero evaluation rows")
    out = {}
    for method in sorted({r["method"] for r in rows}):
        sel = [r for r in rows if r["method"] == method]
        out[method] = {key: float(np.mean([r[key] for r in sel])) for key in ("mmd", "wsd", "erg", "p")}
        out[method]["count"] = len(sel)
    return out


def markdown_table(agg: dict[str, dict[str, float]], title: str | None = None) -> str:
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines += ["| method | MMD | WSD | ERG | P | pairs |", "|---|---|---|---|---|---|"]
    for method, vals in agg.items():
        lines.append(
            f"| {method} | {vals['mmd']:.3f} | {vals['wsd']:.3f} | {vals['erg']:.3f} | {vals['p']:.3f} | {vals['count']} |"
        )
    return "\n".join(lines) + "\n"


def write_rows(rows: Sequence[dict], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in ROW_FIELDS})
    json_path = out_dir / "metrics.json"
    json_path.write_text(json.dumps(list(rows), indent=1) + "\n")
    return csv_path, json_path


def read_rows(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text())


def save_samples(samples: dict[str, dict[str, np.ndarray]], path: str | Path) -> Path:
    flat = {f"{sid}|{key}": arr for sid, group in samples.items() for key, arr in group.items()}
    np.savez(path, **flat)
    return Path(path)


def load_samples(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path) as data:
        for name in data.files:
            sid, key = name.split("|", 1)
            out.setdefault(sid, {})[key] = data[name]
    return out
