#!/usr/bin/env python3
"""MovieLens-1m-scale benchmark: variants, sharing strategies, and ablations.

Builds a 7-field dataset shaped like ML-1m (a couple of high-cardinality id
fields plus small profile fields, one million rows) with a pairwise
multiplicative ground truth, then trains the requested model variants under
identical settings and prints a comparison table.
"""
import argparse
import time

import numpy as np

from contextnet.data import EncodedDataset, split_indices
from contextnet.metrics import auc
from contextnet.model import ModelConfig, init_params, predict_scores
from contextnet.synth import SynthSpec, generate
from contextnet.training import TrainConfig, train

FIELD_CARDS = (2, 7, 21, 500, 800, 18, 81)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--scale", type=float, default=0.52)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--patience", type=int, default=3)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--batch-size", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument(
        "--ablations", action="store_true", help="also train the -TCE/-LN/-RC variants"
    )
    ap.add_argument(
        "--sharing", action="store_true", help="also train agg / agg-proj sharing"
    )
    args = ap.parse_args()

    data = generate(
        SynthSpec(
            n_fields=7,
            cardinalities=FIELD_CARDS,
            rows=args.rows,
            scale=args.scale,
            latent_dim=2,
            token_skew=1.4,
            seed=2024,
        )
    )
    print(f"generated {args.rows} rows, Bayes AUC {data.bayes_auc:.4f}")
    n, f = data.tokens.shape
    ds = EncodedDataset(data.labels, data.tokens + 1, np.ones((n, f)))
    tr, va, te = split_indices(n, args.seed)
    train_set, val_set, test_set = ds.take(tr), ds.take(va), ds.take(te)
    cards = [c + 1 for c in FIELD_CARDS]
    pos = float(train_set.labels.mean())

    def run(tag, **kwargs):
        config = ModelConfig(n_fields=7, **kwargs)
        params = init_params(config, cards, seed=7, pos_rate=pos)
        tconf = TrainConfig(
            batch_size=args.batch_size,
            lr=args.lr,
            max_epochs=args.epochs,
            patience=args.patience,
            seed=args.seed,
        )
        t0 = time.perf_counter()
        best, history = train(config, params, train_set, val_set, tconf)
        test_auc = auc(predict_scores(test_set, best, config), test_set.labels)
        print(
            f"{tag:24s} test AUC {test_auc:.4f}  "
            f"(best val {history.best_val_auc:.4f} at epoch {history.best_epoch}, "
            f"{time.perf_counter() - t0:.0f}s)"
        )
        return test_auc

    run("sffn", variant="sffn")
    run("pffn", variant="pffn")
    if args.sharing:
        run("pffn share-agg", variant="pffn", sharing="agg")
        run("pffn share-agg-proj", variant="pffn", sharing="agg-proj")
    if args.ablations:
        run("pffn w/o tce", variant="pffn", no_tce=True)
        run("pffn w/o ffn", variant="pffn", no_ffn=True)
        run("pffn w/o ln", variant="pffn", no_ln=True)
        run("pffn w/o rc", variant="pffn", no_rc=True)


if __name__ == "__main__":
    main()
