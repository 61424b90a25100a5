"""Scratch benchmark harness with a result cache (not part of the package)."""
import itertools
import json
import os
import sys

import numpy as np

sys.path.insert(0, "src")
from fedfda.config import config_from_dict, realize_dataset, to_federation_config
from fedfda.federation import run_federation

CACHE = "scratch_cache.json"


def load_cache():
    if os.path.exists(CACHE):
        with open(CACHE) as fh:
            return json.load(fh)
    return {}


def save_cache(cache):
    with open(CACHE, "w") as fh:
        json.dump(cache, fh)


def bench(alg, scar, seed, eps, beta_mode="single", rounds=30, q=1.0, sep=0.9, spc=300,
          latent=12, m=40, alpha=0.5, lr=0.01):
    key = json.dumps([alg, scar, seed, eps, beta_mode, rounds, q, sep, spc, latent, m, alpha, lr])
    cache = load_cache()
    if key in cache:
        return cache[key]
    cfg = config_from_dict({
        "dataset": {"synthetic": {"num_classes": 5, "input_dim": m, "latent_dim": latent,
                                  "samples_per_class": spc, "separation": sep},
                    "alpha": alpha, "num_clients": 20,
                    "shift": {"enabled": True}, "scarcity": scar},
        "federation": {"algorithm": alg, "rounds": rounds, "epochs": 5, "q": q, "lr": lr},
        "pfedfda": {"beta_mode": beta_mode, "epsilon": eps},
        "eval_every": 1000,
        "seed": seed,
    })
    shards, C, m_ = realize_dataset(cfg)
    out = run_federation(shards, to_federation_config(cfg, C, m_), cfg.seed)
    betas = [c.beta.beta_mu for c in out.state.clients]
    shifted = [sh.corruption is not None for sh in shards]
    entry = {
        "acc": out.reports[-1].mean_acc,
        "acc_clean": float(np.nanmean([a for a, s in zip(out.final_accuracy, shifted) if not s])),
        "acc_shifted": float(np.nanmean([a for a, s in zip(out.final_accuracy, shifted) if s])),
        "beta_clean": float(np.mean([b for b, s in zip(betas, shifted) if not s])),
        "beta_shifted": float(np.mean([b for b, s in zip(betas, shifted) if s])),
    }
    cache = load_cache()
    cache[key] = entry
    save_cache(cache)
    return entry


def summarize(eps, seeds, **kw):
    res = {}
    for scar in (0.25, 1.0):
        for alg in ("pfedfda", "local_only", "fedavg", "fedavg_ft"):
            res[(alg, scar)] = np.mean([bench(alg, scar, s, eps, **kw)["acc"] for s in seeds])
    nb = np.mean([bench("pfedfda", 0.25, s, eps, beta_mode="none", **kw)["acc"] for s in seeds])
    bs = np.mean([bench("pfedfda", 0.25, s, eps, **kw)["beta_shifted"] for s in seeds])
    bc = np.mean([bench("pfedfda", 0.25, s, eps, **kw)["beta_clean"] for s in seeds])
    p25, p100 = res[("pfedfda", 0.25)], res[("pfedfda", 1.0)]
    print(f"eps={eps} {kw}: p25={p25:.3f} NB {100*(p25-nb):+.1f} "
          f"local {100*(p25-res[('local_only',0.25)]):+.1f} fedavg {100*(p25-res[('fedavg',0.25)]):+.1f} | "
          f"ft25 {100*(p25-res[('fedavg_ft',0.25)]):+.1f} ft100 {100*(p100-res[('fedavg_ft',1.0)]):+.1f} | "
          f"beta s/c {bs:.3f}/{bc:.3f}", flush=True)


if __name__ == "__main__":
    for arg in sys.argv[1:]:
        spec = json.loads(arg)
        eps = spec.pop("eps")
        seeds = range(spec.pop("seeds", 3))
        summarize(eps, seeds, **spec)
