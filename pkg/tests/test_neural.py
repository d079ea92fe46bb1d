import math

import numpy as np
import pytest

from factedit.neural import (
    AMSGrad,
    ShapeError,
    action_distribution,
    attend,
    attention,
    attention_backward,
    bilstm_backward,
    bilstm_encode,
    grad_check,
    loss_forward,
    lstm_cell,
    lstm_cell_backward,
    softmax,
    stream_init,
    stream_step,
    triple_embed,
    word_distribution,
    word_nll,
)

RNG = np.random.default_rng(1234)


def rand(*shape):
    return RNG.normal(0.0, 0.5, size=shape)


# -- scalar-loop oracles ---------------------------------------------------------


def s_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def s_dense_tanh(W, b, x):
    return [math.tanh(sum(W[i][k] * x[k] for k in range(len(x))) + b[i]) for i in range(len(b))]


def s_lstm(W, b, x, h, c):
    H = len(h)
    xh = list(x) + list(h)
    a = [sum(W[r][k] * xh[k] for k in range(len(xh))) + b[r] for r in range(4 * H)]
    i = [s_sigmoid(v) for v in a[:H]]
    f = [s_sigmoid(v) for v in a[H : 2 * H]]
    o = [s_sigmoid(v) for v in a[2 * H : 3 * H]]
    g = [math.tanh(v) for v in a[3 * H :]]
    c2 = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
    h2 = [o[k] * math.tanh(c2[k]) for k in range(H)]
    return h2, c2


def s_softmax(v):
    m = max(v)
    e = [math.exp(t - m) for t in v]
    return [t / sum(e) for t in e]


def s_additive(Wq, Wk, v, q, keys):
    scores = []
    for key in keys:
        pre = [
            math.tanh(sum(Wq[r][k] * q[k] for k in range(len(q))) + sum(Wk[r][k] * key[k] for k in range(len(key))))
            for r in range(len(v))
        ]
        scores.append(sum(v[r] * pre[r] for r in range(len(v))))
    return scores


def test_triple_embed_cases():
    W, b = np.zeros((4, 6)), np.zeros(4)
    e = rand(2)
    assert np.all(triple_embed(W, b, e, e, e) == 0.0)
    assert np.all(triple_embed(W, np.full(4, 50.0), e, e, e) > 0.999)
    W, b, es, ep, eo = rand(4, 6), rand(4), rand(2), rand(2), rand(2)
    x = np.concatenate([es, ep, eo])
    np.testing.assert_allclose(triple_embed(W, b, es, ep, eo), s_dense_tanh(W, b, x), atol=1e-12)
    with pytest.raises(ShapeError):
        triple_embed(W, b, es, ep, rand(3))


def test_lstm_cell_matches_scalar():
    W, b, x, h, c = rand(12, 5), rand(12), rand(2), rand(3), rand(3)
    h2, c2, _ = lstm_cell(W, b, x, h, c)
    sh, sc = s_lstm(W, b, x, h, c)
    np.testing.assert_allclose(h2, sh, atol=1e-12)
    np.testing.assert_allclose(c2, sc, atol=1e-12)


def test_stream_step_gate_semantics():
    H, d = 3, 2
    zeros = stream_step(np.zeros((4 * H, d + H)), np.zeros(4 * H), np.zeros(d), np.zeros(H), np.zeros(H))
    assert np.all(zeros[0] == 0) and np.all(zeros[1] == 0)
    b = np.zeros(4 * H)
    b[:H] = -50.0  # input gate closed
    b[H : 2 * H] = 50.0  # forget gate open
    c = rand(H)
    _, c2 = stream_step(np.zeros((4 * H, d + H)), b, rand(d), rand(H), c)
    np.testing.assert_allclose(c2, c, atol=1e-12)


def test_bilstm_matches_scalar_and_shapes():
    d, H, N = 3, 2, 4
    Wf, bf, Wb, bb = rand(4 * H, d + H), rand(4 * H), rand(4 * H, d + H), rand(4 * H)
    X = rand(N, d)
    out, _ = bilstm_encode(Wf, bf, Wb, bb, X)
    assert out.shape == (N, 2 * H)
    h, c = [0.0] * H, [0.0] * H
    for t in range(N):
        h, c = s_lstm(Wf, bf, X[t], h, c)
        np.testing.assert_allclose(out[t, :H], h, atol=1e-12)
    h, c = [0.0] * H, [0.0] * H
    for t in reversed(range(N)):
        h, c = s_lstm(Wb, bb, X[t], h, c)
        np.testing.assert_allclose(out[t, H:], h, atol=1e-12)
    one, _ = bilstm_encode(Wf, bf, Wb, bb, X[:1])
    assert one.shape == (1, 2 * H)
    with pytest.raises(ShapeError):
        bilstm_encode(Wf, bf, Wb, bb, X[:0])


def test_bilstm_mirror_symmetry():
    d, H, N = 3, 2, 5
    W, b = rand(4 * H, d + H), rand(4 * H)
    X = rand(N, d)
    out, _ = bilstm_encode(W, b, W, b, X)
    rev, _ = bilstm_encode(W, b, W, b, X[::-1])
    np.testing.assert_allclose(rev, np.concatenate([out[::-1, H:], out[::-1, :H]], axis=1), atol=1e-12)


def test_bilstm_batch_with_padding_matches_single():
    d, H = 3, 2
    Wf, bf, Wb, bb = rand(4 * H, d + H), rand(4 * H), rand(4 * H, d + H), rand(4 * H)
    a, c = rand(5, d), rand(3, d)
    batch = np.zeros((2, 5, d))
    batch[0], batch[1, :3] = a, c
    out, _ = bilstm_encode(Wf, bf, Wb, bb, batch, np.array([5, 3]))
    np.testing.assert_allclose(out[0], bilstm_encode(Wf, bf, Wb, bb, a)[0], atol=1e-12)
    np.testing.assert_allclose(out[1, :3], bilstm_encode(Wf, bf, Wb, bb, c)[0], atol=1e-12)


def test_stream_init_cases():
    B, T = rand(4, 6), rand(2, 5)
    W, b = rand(3, 11), rand(3)
    s1, _ = stream_init(W, b, B, T)
    np.testing.assert_allclose(s1, s_dense_tanh(W, b, list(B.mean(0)) + list(T.mean(0))), atol=1e-12)
    s1, _ = stream_init(W, b, B[:1], T[:1])
    np.testing.assert_allclose(s1, s_dense_tanh(W, b, list(B[0]) + list(T[0])), atol=1e-12)
    s0, _ = stream_init(np.zeros((3, 11)), np.zeros(3), np.zeros((2, 6)), np.zeros((1, 5)))
    assert np.all(s0 == 0)
    with pytest.raises(ShapeError):
        stream_init(W, b, B[:0], T)


def test_attend_cases():
    ds, db, dt, da = 3, 4, 2, 5
    W, v = rand(da, ds + db + dt), rand(da)
    s, bt = rand(ds), rand(db)
    t1 = rand(1, dt)
    alpha, ctx = attend(W, v, s, bt, t1)
    np.testing.assert_allclose(alpha, [1.0])
    np.testing.assert_allclose(ctx, t1[0])
    twin = np.vstack([t1, t1])
    alpha, _ = attend(W, v, s, bt, twin)
    np.testing.assert_allclose(alpha, [0.5, 0.5])
    ts = rand(3, dt)
    alpha, ctx = attend(W, v, s, bt, ts)
    q = list(s) + list(bt)
    expected = s_softmax(s_additive(W[:, : ds + db], W[:, ds + db :], v, q, ts))
    np.testing.assert_allclose(alpha, expected, atol=1e-12)
    np.testing.assert_allclose(ctx, sum(a * t for a, t in zip(expected, ts)), atol=1e-12)
    assert abs(alpha.sum() - 1) < 1e-12
    with pytest.raises(ShapeError):
        attend(W, v, s, bt, ts[:0])


def test_action_distribution_cases():
    ds, db, dt = 3, 4, 2
    Wz, bz = rand(5, ds + db + dt), rand(5)
    s, bt, ctx = rand(ds), rand(db), rand(dt)
    _, p = action_distribution(Wz, bz, np.zeros((3, 5)), s, bt, ctx)
    np.testing.assert_allclose(p, [1 / 3] * 3)
    Wa = np.zeros((3, 5))
    Wa[2] = 1e4
    z, p = action_distribution(Wz, bz, Wa, s, bt, ctx)
    assert p[2] > 1 - 1e-9 or (z < 0).sum() > 2  # large logit dominates when its sum is positive
    Wa = rand(3, 5)
    z, p = action_distribution(Wz, bz, Wa, s, bt, ctx)
    z_ref = s_dense_tanh(Wz, bz, list(s) + list(bt) + list(ctx))
    np.testing.assert_allclose(z, z_ref, atol=1e-12)
    np.testing.assert_allclose(p, s_softmax([sum(Wa[a][k] * z_ref[k] for k in range(5)) for a in range(3)]), atol=1e-12)


def _word_setup(V=6, ds=4, dt=3, da=5, M=3):
    return rand(V, ds), rand(da, ds), rand(da, dt), rand(da), rand(ds), rand(ds), rand(M, dt)


def test_word_distribution_gate_extremes():
    W_y, Wcq, Wck, v_c, w_g, z, T = _word_setup()
    dist = word_distribution(W_y, Wcq, v_c, w_g, np.array([60.0]), z, T @ Wck.T)
    np.testing.assert_allclose(dist.mixture(6, [1, 2, 3]), dist.p_gen, atol=1e-12)
    dist = word_distribution(W_y, Wcq, v_c, w_g, np.array([-60.0]), z, T[:1] @ Wck.T)
    mix = dist.mixture(6, [4])
    assert abs(mix[4] - 1.0) < 1e-12


def test_word_distribution_shared_object_masses_add():
    W_y, Wcq, Wck, v_c, w_g, z, T = _word_setup()
    dist = word_distribution(W_y, Wcq, v_c, w_g, np.array([0.3]), z, T @ Wck.T)
    e = s_additive(Wcq, Wck, v_c, z, T)
    pc = s_softmax(e)
    g = s_sigmoid(float(w_g @ z) + 0.3)
    pg = s_softmax([sum(W_y[w][k] * z[k] for k in range(4)) for w in range(6)])
    mix = dist.mixture(6, [2, 2, 5])  # objects 0 and 1 are the same word
    assert abs(mix[2] - (g * pg[2] + (1 - g) * (pc[0] + pc[1]))) < 1e-12
    assert abs(mix[5] - (g * pg[5] + (1 - g) * pc[2])) < 1e-12
    assert abs(mix.sum() - 1.0) < 1e-12
    # OOV object gets an extended slot
    ext = dist.mixture(6, [2, 6, 5])
    assert ext.shape == (7,) and abs(ext.sum() - 1) < 1e-12
    copy_mask = np.array([True, True, False])
    assert abs(word_nll(dist, 2, copy_mask) + math.log(mix[2])) < 1e-12


def test_softmax_properties():
    x = rand(7)
    np.testing.assert_allclose(softmax(x), softmax(x + 123.4), atol=1e-9)
    assert abs(softmax(x).sum() - 1) < 1e-12
    big = np.array([1000.0, 0.0])
    assert np.isfinite(softmax(big)).all()


def test_loss_forward_cases():
    uniform = [np.full(3, 1 / 3)] * 2
    assert abs(loss_forward(uniform, [0, 1], [None, None]) - 2 * math.log(3)) < 1e-12
    sure = [np.array([1.0, 0.0, 0.0])] * 3
    assert loss_forward(sure, [0, 0, 0], [None, None, None]) == 0.0
    probs = [np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.1, 0.3])]
    expected = -(math.log(0.5) + math.log(0.25) + math.log(0.6))
    assert abs(loss_forward(probs, [2, 0], [0.25, None]) - expected) < 1e-12
    with pytest.raises(ShapeError):
        loss_forward(probs, [0], [None, None])


# -- backward blocks ------------------------------------------------------------------


def test_lstm_cell_backward_finite_differences():
    W, b, x, h, c = rand(12, 5), rand(12), rand(2), rand(3), rand(3)
    wh, wc = rand(3), rand(3)

    def loss(p):
        h2, c2, _ = lstm_cell(p["W"], p["b"], p["x"], p["h"], p["c"])
        return float(wh @ h2 + wc @ c2)

    params = {"W": W, "b": b, "x": x, "h": h, "c": c}
    _, _, cache = lstm_cell(W, b, x, h, c)
    dW, db, dxh, dc = lstm_cell_backward(W, cache, wh, wc)
    grads = {"W": dW, "b": db, "x": dxh[:2], "h": dxh[2:], "c": dc}
    assert grad_check(loss, params, grads).passed


def test_bilstm_backward_finite_differences():
    d, H = 2, 3
    params = {"Wf": rand(4 * H, d + H), "bf": rand(4 * H), "Wb": rand(4 * H, d + H), "bb": rand(4 * H), "X": rand(4, d)}
    R = rand(4, 2 * H)

    def loss(p):
        out, _ = bilstm_encode(p["Wf"], p["bf"], p["Wb"], p["bb"], p["X"])
        return float((out * R).sum())

    _, cache = bilstm_encode(params["Wf"], params["bf"], params["Wb"], params["bb"], params["X"], keep_cache=True)
    dWf, dbf, dWb, dbb, dX = bilstm_backward(params["Wf"], params["Wb"], cache, R)
    rep = grad_check(loss, params, {"Wf": dWf, "bf": dbf, "Wb": dWb, "bb": dbb, "X": dX})
    assert rep.passed, rep.failures


def test_attention_backward_finite_differences():
    dq, dk, da, M = 4, 3, 5, 3
    params = {"Wq": rand(da, dq), "Wk": rand(da, dk), "v": rand(da), "q": rand(dq), "K": rand(M, dk)}
    r = rand(dk)

    def loss(p):
        _, ctx, _ = attention(p["Wq"], p["v"], p["q"], p["K"], p["K"] @ p["Wk"].T)
        return float(ctx @ r)

    p = params
    alpha, _, u = attention(p["Wq"], p["v"], p["q"], p["K"], p["K"] @ p["Wk"].T)
    dq_, dWq, dv, dKp, dK = attention_backward(p["Wq"], p["v"], p["q"], p["K"], u, alpha, r)
    grads = {"Wq": dWq, "v": dv, "q": dq_, "Wk": dKp.T @ p["K"], "K": dK + dKp @ p["Wk"]}
    assert grad_check(loss, params, grads).passed


# -- AMSGrad ----------------------------------------------------------------------------


def test_amsgrad_zero_gradient():
    p = {"w": rand(3)}
    before = p["w"].copy()
    opt = AMSGrad()
    opt.step(p, {"w": np.zeros(3)})
    assert opt.step_count == 1
    np.testing.assert_array_equal(p["w"], before)


def test_amsgrad_first_step_by_hand():
    w, g = np.array([1.0, -2.0]), np.array([0.5, -0.1])
    p = {"w": w.copy()}
    AMSGrad(lr=0.01).step(p, {"w": g})
    m = 0.1 * g / (1 - 0.9)
    v = 0.001 * g * g / (1 - 0.999)
    np.testing.assert_allclose(p["w"], w - 0.01 * m / (np.sqrt(v) + 1e-8), atol=1e-15)


def test_amsgrad_constant_gradient_step_tends_to_lr():
    p = {"w": np.zeros(2)}
    opt = AMSGrad(lr=1e-3)
    for _ in range(2000):
        prev = p["w"].copy()
        opt.step(p, {"w": np.array([0.3, -4.0])})
    np.testing.assert_allclose(np.abs(p["w"] - prev), 1e-3, rtol=1e-6)


def test_amsgrad_vmax_monotone_and_lr_zero():
    p = {"w": rand(4)}
    before = p["w"].copy()
    opt = AMSGrad(lr=0.0)
    prev = np.zeros(4)
    for k in range(20):
        opt.step(p, {"w": rand(4) * (10 if k == 3 else 1)})
        assert np.all(opt.v_max["w"] >= prev)
        prev = opt.v_max["w"].copy()
    np.testing.assert_array_equal(p["w"], before)
    with pytest.raises(ShapeError):
        opt.step(p, {"w": np.zeros(3)})


# -- gradient checker ------------------------------------------------------------------


def test_grad_check_flags_corruption_and_unused():
    params = {"a": rand(3), "unused": rand(2)}

    def loss(p):
        return float(np.sum(np.sin(p["a"])))

    good = {"a": np.cos(params["a"]), "unused": np.zeros(2)}
    rep = grad_check(loss, params, good)
    assert rep.passed and {p.name: p.status for p in rep.params} == {"a": "ok", "unused": "unused"}
    bad = {"a": np.cos(params["a"]) * np.array([1.0, 1.01, 1.0]), "unused": np.zeros(2)}
    rep = grad_check(loss, params, bad)
    assert not rep.passed and rep.failures == ["a"]
