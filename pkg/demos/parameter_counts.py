"""Parameter budget of plain versus grouped middle blocks, and whole networks."""

from srforge.cli import count_table
from srforge.models import ModelConfig, build_vdsr_baseline, build_vdsr_resnext, count_parameters


def main():
    print(f"{'width':>6} {'design':>9} {'bias':>5} {'per block':>10}")
    for w, design, bias, per, _ in count_table([64, 128, 256]):
        if not bias:
            print(f"{w:>6} {design:>9} {'no':>5} {per:>10,}")
    print()
    print(f"{'VDSR (18 x 64)':<24} {count_parameters(build_vdsr_baseline(18)):>10,}")
    for w in (64, 128, 256):
        cfg = ModelConfig(18, w)
        print(f"{cfg.name:<24} {count_parameters(build_vdsr_resnext(cfg)):>10,}")


if __name__ == "__main__":
    main()
