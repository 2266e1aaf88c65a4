#!/usr/bin/env python3
"""
Write the synthetic interaction dataset used for end-to-end checks.

The target is sign(f0 * f1) with label noise, so no single original column
predicts it but the product does; the sensitive attribute is derived from f2.
"""

import argparse
import os
import sys

import numpy as np
import pandas as pd

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config

TARGET = 'target'
SENSITIVE = 'group'


def make_synthetic_frame(n_rows: int = 500, seed: int = config.SEED, noise: float = 0.1,
                         n_noise_features: int = 1) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    f0 = rng.normal(size=n_rows)
    f1 = rng.normal(size=n_rows)
    f2 = rng.normal(size=n_rows)
    target = (f0 * f1 + noise * rng.normal(size=n_rows) > 0).astype(int)
    sensitive = (f2 + 0.3 * rng.normal(size=n_rows) > 0).astype(int)

    frame = pd.DataFrame({'f0': f0, 'f1': f1, 'f2': f2})
    for i in range(n_noise_features):
        frame[f'f{3 + i}'] = rng.normal(size=n_rows)
    frame[TARGET] = target
    frame[SENSITIVE] = sensitive
    return frame


def main():
    parser = argparse.ArgumentParser(description='Write the synthetic interaction dataset')
    parser.add_argument('--rows', type=int, default=500, help='Number of rows (default: 500)')
    parser.add_argument('--seed', type=int, default=config.SEED, help=f'Random seed (default: {config.SEED})')
    parser.add_argument('--out', default='synthetic.csv', help='Output CSV path')
    args = parser.parse_args()

    frame = make_synthetic_frame(args.rows, args.seed)
    frame.to_csv(args.out, index=False)
    print(f"✓ Wrote {len(frame)} rows to {args.out} (target='{TARGET}', sensitive='{SENSITIVE}')")
    return 0


if __name__ == '__main__':
    sys.exit(main())
