"""Scratch calibration harness for the default benchmark parameters (not shipped)."""
import sys
import time
import numpy as np
from dataclasses import replace

from cdp.dataset import SyntheticConfig, generate_synthetic, HOMOGENEOUS, HETEROGENEOUS
from cdp.config import PipelineConfig, SweepConfig, derive_seed
from cdp.mediator import TrainConfig
from cdp.evaluation import ConsensusRunner, _runner_for


def assess(syn: SyntheticConfig, k=20, threshold=0.96, batch=32, M=300, kvals=(10, 20, 30, 40), seeds=(7, 8, 9, 10, 11), verbose=True):
    t0 = time.time()
    cfg = PipelineConfig(synthetic=syn, k=k, threshold=threshold,
                         train=TrainConfig(batch_size=batch), seed=7)
    data = generate_synthetic(replace(syn, seed=derive_seed(7, "generate")))
    runner = _runner_for(cfg, data, k_max=max(kvals))

    out = {}
    vote = runner.run_voting()
    row_v = runner.evaluate_selection("voting", vote)
    sel, model = runner.run_mediator()
    row_m = runner.evaluate_selection("mediator", sel)
    out["vote_count"] = row_v.pair_count
    out["vote_prec"] = row_v.pair_precision
    out["vote_pw"] = (row_v.pairwise_recall, row_v.pairwise_precision)
    out["med_count"] = row_m.pair_count
    out["med_prec"] = row_m.pair_precision
    out["med_pw"] = (row_m.pairwise_recall, row_m.pairwise_precision)
    out["a_count"] = row_m.pair_count > row_v.pair_count
    out["a_prec"] = row_m.pair_precision >= 0.95
    out["b_pw"] = row_m.pairwise_precision > row_v.pairwise_precision
    out["t_table2"] = time.time() - t0

    # k sweep
    t0 = time.time()
    counts, pws = [], []
    for kk in kvals:
        s, _ = runner.run_mediator(k=kk)
        r = runner.evaluate_selection(f"k={kk}", s)
        counts.append(r.pair_count)
        pws.append(r.pairwise_precision)
    out["k_counts"] = counts
    out["k_pws"] = [round(p, 4) for p in pws]
    out["c_counts"] = all(c2 >= c1 for c1, c2 in zip(counts, counts[1:]))
    out["c_pws"] = all(p2 <= p1 + 1e-12 for p1, p2 in zip(pws, pws[1:]))
    out["t_ksweep"] = time.time() - t0

    # heterogeneity over seeds
    t0 = time.time()
    het, hom = [], []
    for s in seeds:
        for mode, acc in ((HETEROGENEOUS, het), (HOMOGENEOUS, hom)):
            d = generate_synthetic(replace(syn, seed=derive_seed(s, "generate"), committee_mode=mode))
            rn = _runner_for(cfg, d)
            selm, _ = rn.run_mediator()
            acc.append(rn.evaluate_selection("m", selm).pairwise_precision)
    out["het"] = [round(x, 4) for x in het]
    out["hom"] = [round(x, 4) for x in hom]
    out["d_het"] = float(np.mean(het)) >= float(np.mean(hom))
    out["t_het"] = time.time() - t0

    if verbose:
        print(f"  voting: count={out['vote_count']} prec={out['vote_prec']:.4f} pw={out['vote_pw'][0]:.3f}/{out['vote_pw'][1]:.4f}")
        print(f"  mediat: count={out['med_count']} prec={out['med_prec']:.4f} pw={out['med_pw'][0]:.3f}/{out['med_pw'][1]:.4f}")
        print(f"  (a) count {out['a_count']} prec>=.95 {out['a_prec']}   (b) pw-prec {out['b_pw']}")
        print(f"  k counts {out['k_counts']} mono {out['c_counts']}")
        print(f"  k pwprec {out['k_pws']} mono {out['c_pws']}")
        print(f"  het {np.mean(het):.4f} {out['het']}")
        print(f"  hom {np.mean(hom):.4f} {out['hom']}  ordering {out['d_het']}")
        print(f"  times: table2={out['t_table2']:.0f}s ksweep={out['t_ksweep']:.0f}s het={out['t_het']:.0f}s")
    ok = all([out["a_count"], out["a_prec"], out["b_pw"], out["c_counts"], out["c_pws"], out["d_het"]])
    print(f"  => ALL PASS: {ok}")
    return out


if __name__ == "__main__":
    base = SyntheticConfig(num_identities=110, labeled_identities=10, samples_per_identity=50,
                           dim=16, intra_class_sigma=0.16, num_committee=8,
                           view_rotation_angle=0.35, view_noise_sigma=0.06, seed=7)
    for sigma in (float(a) for a in sys.argv[1:] or ["0.16"]):
        print(f"== sigma={sigma}")
        assess(replace(base, intra_class_sigma=sigma))
