"""Time the compiled kernels against the pure-Python fallback.

Both lanes implement the same contract (see depaudit._kernels_py); this
script cross-checks their outputs on the generated workload, then reports
best-of-N wall time for each. Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --versions 50000 --nodes 200000
"""

from __future__ import annotations

import argparse
import random
import time

from depaudit import _kernels_py

try:
    from depaudit import _speedups
except ImportError:
    _speedups = None

PRERELEASE = ["alpha", "beta", "rc", "pre", "dev", "SNAPSHOT", "post"]


def version_corpus(rng: random.Random, count: int) -> list[str]:
    """Strings shaped like the tags and manifest pins seen in the wild."""
    out = []
    for _ in range(count):
        core = ".".join(str(rng.randint(0, 40)) for _ in range(rng.randint(1, 4)))
        if rng.random() < 0.3:
            core += f"-{rng.choice(PRERELEASE)}.{rng.randint(0, 20)}"
        if rng.random() < 0.15:
            core += f"+build{rng.randint(1, 999)}"
        if rng.random() < 0.2:
            core = "v" + core
        out.append(core)
    return out


def csr_graph(rng: random.Random, nodes: int, degree: int):
    """Random adjacency in CSR form plus a handful of roots."""
    adjacency = [
        sorted(rng.randrange(nodes) for _ in range(rng.randint(0, 2 * degree)))
        for _ in range(nodes)
    ]
    offsets = [0]
    targets: list[int] = []
    for row in adjacency:
        targets.extend(row)
        offsets.append(len(targets))
    roots = sorted({rng.randrange(nodes) for _ in range(8)})
    return offsets, targets, roots


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def report(label: str, lanes: dict[str, float], per_op: int) -> None:
    print(label)
    baseline = lanes.get("pure")
    for name, seconds in lanes.items():
        rate = per_op / seconds
        line = f"  {name:<9} {seconds * 1000:9.2f} ms  {rate / 1000:9.1f}k ops/s"
        if name != "pure" and baseline:
            line += f"  {baseline / seconds:5.1f}x"
        print(line)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--versions", type=int, default=20000,
                        help="version strings to segment per pass")
    parser.add_argument("--nodes", type=int, default=100000,
                        help="graph size for the depth search")
    parser.add_argument("--degree", type=int, default=3,
                        help="average out-degree of the graph")
    parser.add_argument("--repeats", type=int, default=5,
                        help="passes per lane; best one is reported")
    parser.add_argument("--seed", type=int, default=20230615)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    versions = version_corpus(rng, args.versions)
    offsets, targets, roots = csr_graph(rng, args.nodes, args.degree)

    lanes = {"pure": _kernels_py}
    if _speedups is not None:
        lanes["compiled"] = _speedups
    else:
        print("compiled extension not built; timing the pure lane only")

    reference = [_kernels_py.segment_version(v) for v in versions]
    ref_depths = _kernels_py.bfs_depths(args.nodes, offsets, targets, roots)
    for name, mod in lanes.items():
        assert [mod.segment_version(v) for v in versions] == reference, name
        assert mod.bfs_depths(args.nodes, offsets, targets, roots) == ref_depths, name

    seg_times = {
        name: best_of(lambda m=mod: [m.segment_version(v) for v in versions],
                      args.repeats)
        for name, mod in lanes.items()
    }
    report(f"segment_version: {len(versions)} strings", seg_times, len(versions))

    bfs_times = {
        name: best_of(lambda m=mod: m.bfs_depths(args.nodes, offsets, targets,
                                                 roots),
                      args.repeats)
        for name, mod in lanes.items()
    }
    report(f"bfs_depths: {args.nodes} nodes, {len(targets)} edges",
           bfs_times, args.nodes)


if __name__ == "__main__":
    main()
