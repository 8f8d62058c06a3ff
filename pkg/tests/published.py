"""Published traffic grid, typed in by hand; rows are methods, columns architectures."""

ARCHS = ("femnist", "shakespeare", "sent140", "mnist", "cifar10")

_GRID = """
fedavg      2413180 1645140 161344 2399764 19870868
fedprox     2413180 1645140 161344 2399764 19870868
hypcluster  3619770 2467710 242016 3599646 29806302
fml         2413180 1645140 161344 2399764 19870868
fedme       6032950 4112850 403360 5999410 49677170
lg_fedavg     15996   46260  25644    2580  1060884
fedper      2397184 1598880 161300 2397184 18809984
fedrep      2397184 1598880 161300 2397184 18809984
ditto       2413180 1645140 161344 2399764 19870868
pfedme      2413180 1645140 161344 2399764 19870868
"""

_RATIOS = """
fedavg      1     1     1     1     1
fedprox     1     1     1     1     1
hypcluster  1.5   1.5   1.5   1.5   1.5
fml         1     1     1     1     1
fedme       2.5   2.5   2.5   2.5   2.5
lg_fedavg   0.007 0.028 0.159 0.001 0.053
fedper      0.993 0.972 1     0.999 0.947
fedrep      0.993 0.972 1     0.999 0.947
ditto       1     1     1     1     1
pfedme      1     1     1     1     1
"""


def _parse(text, cast):
    out = {}
    for line in text.strip().splitlines():
        name, *vals = line.split()
        for arch, v in zip(ARCHS, vals):
            out[(arch, name)] = cast(v)
    return out


TRAFFIC = _parse(_GRID, int)
RATIOS = _parse(_RATIOS, float)
ARCH_TOTALS = dict(femnist=1_206_590, shakespeare=822_570, sent140=80_672, mnist=1_199_882, cifar10=9_935_434)

# Trainable parameters per layer, in table order (zeros for pooling, dropout, activations).
LAYER_COUNTS = {
    "femnist": [0, 320, 18496, 0, 0, 0, 1179776, 0, 7998],
    "shakespeare": [0, 720, 798720, 23130],
    "sent140": [0, 0, 79360, 1290, 0, 22],
    "mnist": [0, 320, 18496, 0, 0, 0, 1179776, 0, 1290],
    "cifar10": [0, 1792, 36928, 0, 73856, 147584, 0, 295168, 590080, 0, 1180160, 2359808, 0,
                2359808, 2359808, 0, 0, 262656, 0, 262656, 5130],
}
