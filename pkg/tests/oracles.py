"""Plain-numpy reference computations, written independently of the package internals.

Nothing here touches the tape; networks, Jacobians and the integrator are
recomposed from scratch so the package can be checked against them.
"""

import numpy as np

LOG2PI = np.log(2 * np.pi)


def layers(params, prefix):
    out = []
    k = 0
    while f"{prefix}.W{k}" in params:
        out.append((params[f"{prefix}.W{k}"], params[f"{prefix}.b{k}"]))
        k += 1
    return out


def unflatten(flat, widths):
    out, o = [], 0
    for a, b in zip(widths[:-1], widths[1:]):
        W = flat[o : o + a * b].reshape(a, b)
        o += a * b
        out.append((W, flat[o : o + b]))
        o += b
    assert o == flat.size
    return out


def mlp(ls, x, out_act="none"):
    h = x
    for i, (W, b) in enumerate(ls):
        h = h @ W + b
        if i < len(ls) - 1:
            h = np.tanh(h)
    if out_act == "sigmoid":
        h = 1 / (1 + np.exp(-h))
    return h


def mlp_jacobian(ls, x):
    """d out / d in for a tanh network with a linear output, x a single row."""
    J = np.eye(x.size)
    h = x
    for i, (W, b) in enumerate(ls):
        pre = h @ W + b
        J = W.T @ J
        if i < len(ls) - 1:
            h = np.tanh(pre)
            J = (1 - h**2)[:, None] * J
        else:
            h = pre
    return J


def gauss_logpdf(x, mean, log_var):
    return np.sum(-0.5 * LOG2PI - 0.5 * log_var - 0.5 * (x - mean) ** 2 / np.exp(log_var), axis=-1)


def kl_std(mean, log_var):
    return 0.5 * np.sum(np.exp(log_var) + mean**2 - 1 - log_var, axis=-1)


def encode(params, x_pos, window, d):
    a = mlp(layers(params, "pos_enc"), x_pos)
    b = mlp(layers(params, "vel_enc"), window.reshape(-1))
    mean = np.concatenate([a[:d], b[:d]])
    log_var = np.clip(np.concatenate([a[d:], b[d:]]), -10, 10)
    return mean, log_var


def loglik(params, s, x, likelihood):
    out = mlp(layers(params, "dec"), s, "sigmoid" if likelihood == "bernoulli" else "none")
    if likelihood == "bernoulli":
        p = np.clip(out, 1e-6, 1 - 1e-6)
        return np.sum(x * np.log(p) + (1 - x) * np.log(1 - p))
    lv = params["dec.log_var"]
    return np.sum(-0.5 * LOG2PI - 0.5 * lv - 0.5 * (x - out) ** 2 / np.exp(lv))


def rk4_with_density(f_and_trace, z0, lq0, times, r):
    """Classical RK4 on (z, logq) with d logq/dt = -trace; states at times[1:]."""
    z, lq = np.array(z0, dtype=float), float(lq0)
    out = []

    def rate(z):
        f, tr = f_and_trace(z)
        return f, -tr

    for t0, t1 in zip(times[:-1], times[1:]):
        h = (t1 - t0) / r
        for _ in range(r):
            k1 = rate(z)
            k2 = rate(z + 0.5 * h * k1[0])
            k3 = rate(z + 0.5 * h * k2[0])
            k4 = rate(z + h * k3[0])
            z = z + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            lq = lq + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append((z.copy(), lq))
    return out


def objective(cfg, params, times, frames, mask, eps_w, eps_z, gamma=0.0, beta=None):
    """Reference bound: dict of batch-mean terms, weight KL and total."""
    d, m = cfg.latent_dim, cfg.window
    n, L, D = frames.shape
    hidden = tuple(cfg.dyn_hidden)
    out_w = d if cfg.dynamics_mode == "second" else 2 * d
    widths = (2 * d, *hidden, out_w)
    P = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    mvec = params["bnn.m"]
    bayes = cfg.weight_mode == "bayesian"
    if bayes:
        s = np.exp(params["bnn.log_s"])
        wkl = 0.5 * (P * s + mvec @ mvec - P - P * params["bnn.log_s"])
    else:
        wkl = 0.5 * cfg.weight_decay * (mvec @ mvec)
    if beta is None:
        beta = 2 * d / P if cfg.beta is None else cfg.beta

    vae, dyn, enc = np.zeros(n), np.zeros(n), np.zeros(n)
    for i in range(n):
        x = frames[i]
        win = x[:m]
        if len(win) < m:
            win = np.concatenate([win, np.repeat(win[-1:], m - len(win), 0)])
        mu, lv = encode(params, x[0], win, d)
        z0 = mu + np.exp(0.5 * lv) * eps_z[i]
        lq0 = gauss_logpdf(z0, mu, lv)
        vae[i] = loglik(params, z0[:d], x[0], cfg.likelihood) - kl_std(mu, lv)
        if L == 1:
            continue
        w = mvec + np.sqrt(s) * eps_w[i] if bayes else mvec
        net = unflatten(w, widths)

        def f_and_trace(z):
            f = mlp(net, z)
            J = mlp_jacobian(net, z)
            if cfg.dynamics_mode == "second":
                return np.concatenate([z[d:], f]), np.trace(J[:, d:])
            return f, np.trace(J)

        states = rk4_with_density(f_and_trace, z0, lq0, times[i], cfg.refine)
        for k, (z, lq) in enumerate(states, start=1):
            if mask[i, k]:
                dyn[i] += loglik(params, z[:d], x[k], cfg.likelihood) - (lq - gauss_logpdf(z, 0.0, 0.0))
            if k + m - 1 <= L - 1 and mask[i, k : k + m].all():
                mu_k, lv_k = encode(params, x[k], x[k : k + m], d)
                enc[i] += lq - gauss_logpdf(z, mu_k, lv_k)
    total = vae.mean() + dyn.mean() - beta * wkl - gamma * enc.mean()
    return {
        "weight_kl": wkl,
        "vae_term": vae.mean(),
        "dynamic_term": dyn.mean(),
        "enc_consistency": enc.mean(),
        "total": total,
        "beta": beta,
    }


def vae_elbo(params, frames, eps_z, d, m, likelihood):
    """Standard single-frame VAE bound per sequence: log p(x|s) - KL(q(z)||N(0, I))."""
    out = []
    for x, e in zip(frames[:, 0], eps_z):
        win = np.repeat(x[None], m, 0)
        mu, lv = encode(params, x, win, d)
        z = mu + np.exp(0.5 * lv) * e
        out.append(loglik(params, z[:d], x, likelihood) - kl_std(mu, lv))
    return np.array(out)


def param_count(widths):
    """Independent count of weights plus biases of a dense stack."""
    total = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        total += fan_in * fan_out
        total += fan_out
    return total
