"""Independent reference evaluation of the mock backend.

Recomputes the whole forward pass from scratch at every decode step (no
incremental state) in exact rational arithmetic. Its output is frozen into
tests/test_mock_backend.cpp; rerun with `python3 mock_oracle.py` to inspect.
"""
from fractions import Fraction
import math

VOCAB = 4
DETOK = "dabc"
MODULUS = 7


def a_matrix(layer, d):
    return [[((i + 2 * j + layer) % 3) - 1 for j in range(d)] for i in range(d)]


def w_matrix(d):
    return [[((s + 3 * j) % 4) - 1 for j in range(d)] for s in range(VOCAB)]


def wrap(v):
    return v - MODULUS * math.floor(v / MODULUS)


def forward(symbols, L, d, inject=None):
    """states[l][t]: post-block residual at layer l, position t.

    inject = {'vectors': {layer: vec}, 'positions': set, 'mode': 'replace'|'add',
              'scale': Fraction}
    """
    T = len(symbols)
    prev_layer = []
    for s in symbols:
        v = [Fraction(0)] * d
        v[s % d] = Fraction(1)
        prev_layer.append(v)
    states = []
    for l in range(L):
        A = a_matrix(l, d)
        cur = []
        for t in range(T):
            pre = prev_layer[t]
            out = [pre[i] + sum(A[i][j] * pre[j] for j in range(d)) for i in range(d)]
            if t > 0:
                out = [out[i] + cur[t - 1][i] for i in range(d)]
            out = [wrap(x) for x in out]
            if inject is not None and l in inject['vectors'] and t in inject['positions']:
                vec = [Fraction(x) for x in inject['vectors'][l]]
                if inject.get('mode', 'replace') == 'replace':
                    out = vec
                else:
                    out = [out[i] + inject['scale'] * vec[i] for i in range(d)]
            cur.append(out)
        states.append(cur)
        prev_layer = cur
    return states


def logits(h, d):
    W = w_matrix(d)
    return [sum(W[s][j] * h[j] for j in range(d)) for s in range(VOCAB)]


def argmax(xs):
    best = 0
    for i in range(1, len(xs)):
        if xs[i] > xs[best]:
            best = i
    return best


def symbols_of(prompt):
    return [b % VOCAB for b in prompt.encode()]


def generate(prompt, n, L, d, vectors=None, policy="prefill", mode="replace", scale=1):
    syms = symbols_of(prompt)
    P = len(syms)
    out = []
    for _ in range(n):
        inj = None
        if vectors is not None:
            positions = {P - 1} if policy == "prefill" else set(range(P - 1, len(syms)))
            inj = {'vectors': vectors, 'positions': positions, 'mode': mode,
                   'scale': Fraction(scale)}
        st = forward(syms, L, d, inj)
        s = argmax(logits(st[L - 1][len(syms) - 1], d))
        out.append(s)
        syms.append(s)
    return "".join(DETOK[s] for s in out)


def last_token_states(prompt, L, d, vectors=None):
    syms = symbols_of(prompt)
    inj = None
    if vectors is not None:
        inj = {'vectors': vectors, 'positions': {len(syms) - 1}, 'mode': 'replace'}
    st = forward(syms, L, d, inj)
    return [[float(x) for x in st[l][-1]] for l in range(L)]


if __name__ == "__main__":
    print("gen aa (4x3) 8:", generate("aa", 8, 4, 3))
    print("states a (4x3):", last_token_states("a", 4, 3))
    print("states aa (4x3):", last_token_states("aa", 4, 3))
    zero = {2: [0, 0, 0]}
    print("states aa zero@2:", last_token_states("aa", 4, 3, zero))
    print("gen aa zero@2 8:", generate("aa", 8, 4, 3, zero))
    print("gen aa zero@2 every 8:", generate("aa", 8, 4, 3, zero, policy="every_step"))
    print("gen abc add 0.5*[1,2,3]@1 8:",
          generate("abc", 8, 4, 3, {1: [1, 2, 3]}, mode="add", scale=Fraction(1, 2)))
    print("gen 'squish and release' (32x8) 16:", generate("squish and release", 16, 32, 8))
    st = last_token_states("abc", 32, 8)
    print("states abc (32x8) 24..31:", st[24:])
