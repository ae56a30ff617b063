# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels for the two hot loops.

Mirrors the contract documented in ``depaudit._kernels_py``; the test
suite cross-checks both lanes on randomized inputs.  Keep behavioural
changes in lockstep with the pure-Python module.
"""

from cpython.mem cimport PyMem_Free, PyMem_Malloc

cdef str _SEP_DOT = "."
cdef str _SEP_DASH = "-"
cdef str _SEP_UNDER = "_"
cdef str _SEP_PLUS = "+"
cdef str _EMPTY = ""

# Numeric tokens longer than this are converted with int() to keep
# arbitrary-precision semantics identical to the pure lane.
DEF MAX_FAST_DIGITS = 17


cdef inline bint _is_sep(Py_UCS4 ch):
    return ch == u"." or ch == u"-" or ch == u"_" or ch == u"+"


cdef inline str _sep_str(Py_UCS4 ch):
    if ch == u".":
        return _SEP_DOT
    if ch == u"-":
        return _SEP_DASH
    if ch == u"_":
        return _SEP_UNDER
    return _SEP_PLUS


def segment_version(str text):
    """Split ``text`` into (sep, kind, num, alpha) segments."""
    cdef list segments = []
    cdef Py_ssize_t n = len(text)
    if n == 0:
        return segments
    cdef Py_ssize_t i = 0, start, j
    cdef Py_UCS4 ch, cj
    cdef str pending_sep = _EMPTY
    cdef bint last_was_sep = True
    cdef long long fast_num
    cdef object num
    while i < n:
        ch = text[i]
        if _is_sep(ch):
            if last_was_sep:
                if segments:
                    segments.append((pending_sep, 1, 0, _EMPTY))
                else:
                    segments.append((_EMPTY, 1, 0, _EMPTY))
            pending_sep = _sep_str(ch)
            last_was_sep = True
            i += 1
            continue
        start = i
        if u"0" <= ch <= u"9":
            while i < n:
                ch = text[i]
                if ch < u"0" or ch > u"9":
                    break
                i += 1
            if i - start <= MAX_FAST_DIGITS:
                fast_num = 0
                for j in range(start, i):
                    cj = text[j]
                    fast_num = fast_num * 10 + (<long long> cj - 48)
                num = fast_num
            else:
                num = int(text[start:i])
            segments.append((pending_sep, 0, num, _EMPTY))
        else:
            while i < n:
                ch = text[i]
                if _is_sep(ch) or (u"0" <= ch <= u"9"):
                    break
                i += 1
            segments.append((pending_sep, 1, 0, text[start:i]))
        pending_sep = _EMPTY
        last_was_sep = False
    if last_was_sep:
        segments.append((pending_sep, 1, 0, _EMPTY))
    return segments


def bfs_depths(Py_ssize_t count, offsets, targets, roots):
    """Multi-source BFS depths over a CSR adjacency; -1 = unreachable."""
    cdef list result
    cdef Py_ssize_t *depths
    cdef Py_ssize_t *queue
    cdef Py_ssize_t *offs
    cdef Py_ssize_t *tgts
    cdef Py_ssize_t n_targets = len(targets)
    cdef Py_ssize_t head = 0, tail = 0
    cdef Py_ssize_t i, node, child, next_depth
    if count == 0:
        return []
    depths = <Py_ssize_t *> PyMem_Malloc(count * sizeof(Py_ssize_t))
    queue = <Py_ssize_t *> PyMem_Malloc(count * sizeof(Py_ssize_t))
    offs = <Py_ssize_t *> PyMem_Malloc((count + 1) * sizeof(Py_ssize_t))
    tgts = <Py_ssize_t *> PyMem_Malloc((n_targets if n_targets else 1) * sizeof(Py_ssize_t))
    if depths == NULL or queue == NULL or offs == NULL or tgts == NULL:
        PyMem_Free(depths)
        PyMem_Free(queue)
        PyMem_Free(offs)
        PyMem_Free(tgts)
        raise MemoryError()
    try:
        for i in range(count):
            depths[i] = -1
        for i in range(count + 1):
            offs[i] = offsets[i]
        for i in range(n_targets):
            tgts[i] = targets[i]
        for r in roots:
            node = r
            if depths[node] == -1:
                depths[node] = 0
                queue[tail] = node
                tail += 1
        while head < tail:
            node = queue[head]
            head += 1
            next_depth = depths[node] + 1
            for i in range(offs[node], offs[node + 1]):
                child = tgts[i]
                if depths[child] == -1:
                    depths[child] = next_depth
                    queue[tail] = child
                    tail += 1
        result = [0] * count
        for i in range(count):
            result[i] = depths[i]
        return result
    finally:
        PyMem_Free(depths)
        PyMem_Free(queue)
        PyMem_Free(offs)
        PyMem_Free(tgts)
