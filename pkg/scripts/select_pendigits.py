"""Reproduce the hyperparameter choices in configs/pendigits.json.

The SVM regularizer is picked by accuracy on a 20% slice of the known-class
training data; the sample rate by ``search_sample_rate``. Test labels are not
used for either choice. Prints one line per seed with both curves and the
resulting pre/rectified macro F.

    python scripts/select_pendigits.py --seeds 0 1 2 3 4
"""

import argparse
import time

import numpy as np

from openrect.classifiers import make_classifier
from openrect.dataset import holdout_indices, load_csv, make_scenario
from openrect.rtscv import (
    RtscvConfig,
    evaluate_model,
    evaluate_rectified,
    rectify,
    search_sample_rate,
    unsampled_rows,
)

LAMBDAS = (1e-4, 1e-5, 1e-6)
RATES = (0.06, 0.08, 0.1, 0.15, 0.2)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/pendigits.csv")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    full, _ = load_csv(args.data)
    print("seed lam val_acc c known_dummy_curve pre_f rect_f gap_points seconds")
    for s in args.seeds:
        t0 = time.perf_counter()
        sc = make_scenario(full, [7, 8, 9], 0.68, s)
        fit_idx, val_idx = holdout_indices(len(sc.train), 0.2, sc.train.labels, s)
        fit, val = sc.train.subset(fit_idx), sc.train.subset(val_idx)
        scored = []
        for lam in LAMBDAS:
            model = make_classifier("svm", lam=lam, epochs=args.epochs, seed=s)().fit(fit)
            scored.append((float(np.mean(model.predict(val.features) == val.labels)), lam))
        acc, lam = max(scored)
        f = make_classifier("svm", lam=lam, epochs=args.epochs, seed=s)
        c, curve = search_sample_rate(sc.train, sc.test, f, RATES, k=3, seed=s)
        out = rectify(sc.train, sc.test, f, RtscvConfig(c=c, k=3, seed=s))
        rows = unsampled_rows(out, len(sc.test))
        pre = evaluate_model(f().fit(sc.train), sc.test, sc.n_known, rows).macro_f
        post = evaluate_rectified(out, sc.test).macro_f
        print(
            s, lam, round(acc, 3), c, [round(v, 4) for _, v in curve],
            round(pre, 3), round(post, 3), round(100 * (post - pre), 1), round(time.perf_counter() - t0),
        )


if __name__ == "__main__":
    main()
