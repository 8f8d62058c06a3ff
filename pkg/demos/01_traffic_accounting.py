"""How much does each method move per round?

Traffic is pure parameter arithmetic: every method has an exchange plan
(which model parts go down and come back up each round), and the cost is
the plan applied to an architecture's layer table.
"""
from fedsim.accounting import DISPLAY_NAMES, traffic_table
from fedsim.models import BODY, HEAD, bundled_arch, param_count

ARCHS = ("femnist", "shakespeare", "sent140", "mnist", "cifar10")

print("Architectures (trainable parameters):")
for name in ARCHS:
    spec = bundled_arch(name)
    print(f"  {name:12s} total {param_count(spec):>10,}  body {param_count(spec, BODY):>10,}  head {param_count(spec, HEAD):>9,}")

print("\nParameters exchanged per client per round:")
tables = {name: traffic_table(bundled_arch(name)) for name in ARCHS}
print(f"  {'method':12s}" + "".join(f"{a:>13s}" for a in ARCHS))
for i, row in enumerate(tables["mnist"]):
    cells = []
    for a in ARCHS:
        r = tables[a][i]
        flag = "" if r["match"] in (None, True) else "*"
        cells.append(f"{r['params_per_round']:>12,}{flag or ' '}")
    print(f"  {DISPLAY_NAMES[row['method']]:12s}" + "".join(cells))

print("\n* differs from the published table: LG-FedAvg on Sent140 shares only the")
print("  final linear layer (2 x 22 = 44), while the published cell reads 25,644.")
