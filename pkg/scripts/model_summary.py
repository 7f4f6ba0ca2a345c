"""Sequence lengths, token overhead and preset sizes in one table."""

from freqscan.model import REFERENCE_PLAIN_MINI, analytic_parameter_count, estimate_flops, preset
from freqscan.serialization import band_grids, sequence_length


def main():
    print("K,band_grids,length,overhead_vs_K1")
    base = sequence_length(1, 14, True)
    for K in range(1, 7):
        L = sequence_length(K, 14, True)
        print(f"{K},{';'.join(map(str, band_grids(K, 14)))},{L},{L / base:.4f}")
    print()
    print("preset,depth,embed_dim,seq_len,params,macs_per_image")
    for name in ("micro_plain", "tiny_plain"):
        cfg = preset(name)
        print(f"{name},{cfg.depth},{cfg.embed_dim},{cfg.serialization.seq_len},"
              f"{analytic_parameter_count(cfg)},{estimate_flops(cfg)}")
    ref = REFERENCE_PLAIN_MINI
    print(f"# full-scale reference (not reproduced): depth {ref['depth']}, dim {ref['embed_dim']}, "
          f"{ref['params_m']}M params, {ref['flops_g']} GFLOPs at 224px")


if __name__ == "__main__":
    main()
