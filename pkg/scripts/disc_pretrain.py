"""Pre-train the discriminator on real SQL trees against their twisted versions."""
import argparse

import numpy as np

from treegan import datasets as ds
from treegan import discriminator as disc
from treegan import training as tr
from treegan.earley import parse_sequence
from treegan.parse_tree import actions_to_tree


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="sql-a-desk")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--n-fresh", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.5)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--no-rule-ids", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    g, schema = ds.gen_sql_spec(ds.PRESETS[args.preset], rng)
    lines = ds.gen_sql_corpus(g, schema, args.n + args.n_fresh, rng)
    trees = [actions_to_tree(parse_sequence(t, g), g) for t in lines]
    real, fresh = trees[:args.n], trees[args.n:]
    neg = tr.twisted_negatives(real, g, rng)
    fresh_neg = tr.twisted_negatives(fresh, g, rng)
    model = disc.DiscriminatorModel.create(g, 16, args.hidden, rng, use_rule_ids=not args.no_rule_ids)
    cfg = tr.TrainConfig(lr_disc=args.lr)
    tr.pretrain_discriminator(model, g, real, neg, cfg, rng, epochs=args.epochs,
                              log=lambda r: print(f"epoch {r['epoch']:3d}  loss {r['disc_loss']:.5f}  "
                                                  f"held-out acc {r['heldout_acc']:.4f}"))
    pr, pt = disc.score_batch(model, g, fresh), disc.score_batch(model, g, fresh_neg)
    print(f"fresh trees: mean score real {pr.mean():.4f}, twisted {pt.mean():.4f}, gap {pr.mean() - pt.mean():.4f}")


if __name__ == "__main__":
    main()
