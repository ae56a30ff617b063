"""Pure-Python kernels for the two hot loops.

These are the fallback implementations selected by :mod:`depaudit._native`
when the compiled extension (``depaudit._speedups``) is not available.
Both lanes implement the exact same contract and are cross-checked by the
test suite; keep any behavioural change mirrored in ``_speedups.pyx``.

Contract
--------
``segment_version(text)`` splits a version string into typed segments.
Each segment is a 4-tuple ``(sep, kind, num, alpha)``:

* ``sep``   -- separator that preceded the segment: one of ``''``, ``'.'``,
               ``'-'``, ``'_'``, ``'+'``.  Empty for the first segment and
               for digit/letter transition splits ("1a" -> "1", "a").
* ``kind``  -- 0 for a numeric run, 1 for anything else.
* ``num``   -- integer value when kind is 0, else 0.
* ``alpha`` -- original token text when kind is 1, else ''.

Consecutive, leading, or trailing separators produce an empty alpha
segment so that callers can apply their own null-token semantics.
The empty string yields an empty list.

``bfs_depths(count, offsets, targets, roots)`` runs a multi-source
breadth-first search over a CSR adjacency (``offsets`` has ``count + 1``
entries; ``targets[offsets[i]:offsets[i+1]]`` are the successors of node
``i``).  Roots get depth 0; unreachable nodes get -1.
"""

from __future__ import annotations

import re
from collections import deque

_SEPARATORS = {".", "-", "_", "+"}

# One token per match: an ASCII digit run, a run of other non-separator
# characters, or a single separator.  Non-ASCII digits count as text so
# both kernel lanes agree.
_TOKEN_RE = re.compile(r"[0-9]+|[.\-_+]|[^.\-_+0-9]+")


def segment_version(text: str) -> list[tuple[str, int, int, str]]:
    segments: list[tuple[str, int, int, str]] = []
    if not text:
        return segments
    pending_sep = ""
    last_was_sep = True  # a leading separator yields an empty segment
    for match in _TOKEN_RE.finditer(text):
        token = match.group()
        if token in _SEPARATORS:
            if last_was_sep and segments:
                segments.append((pending_sep, 1, 0, ""))
            elif last_was_sep:
                # leading separator: empty first segment with sep ''
                segments.append(("", 1, 0, ""))
            pending_sep = token
            last_was_sep = True
            continue
        if "0" <= token[0] <= "9":
            segments.append((pending_sep, 0, int(token), ""))
        else:
            segments.append((pending_sep, 1, 0, token))
        pending_sep = ""
        last_was_sep = False
    if last_was_sep:
        segments.append((pending_sep, 1, 0, ""))
    return segments


def bfs_depths(
    count: int,
    offsets: list[int],
    targets: list[int],
    roots: list[int],
) -> list[int]:
    depths = [-1] * count
    queue: deque[int] = deque()
    for r in roots:
        if depths[r] == -1:
            depths[r] = 0
            queue.append(r)
    while queue:
        node = queue.popleft()
        next_depth = depths[node] + 1
        for i in range(offsets[node], offsets[node + 1]):
            child = targets[i]
            if depths[child] == -1:
                depths[child] = next_depth
                queue.append(child)
    return depths
