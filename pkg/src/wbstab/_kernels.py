"""Numba kernels for the per-tick hot path.

Two entry points:

* ``kin_dyn``: forward kinematics, world-origin-referenced Jacobian stack,
  link velocities and bias accelerations, mass matrix and bias vector, CoM
  and CoM Jacobian, all in one pass over the tree.
* ``plant_steps``: the penalty-contact plant substep loop (servo + contact +
  forward dynamics + integration) used by ``simworld``.

Everything operates on flat arrays prepared by ``rbd.KinematicsEvaluator``
and ``simworld``; no Python objects cross into this module.
"""

from __future__ import annotations

import numpy as np
from numba import njit

G_Z = -9.81

# platform trajectory kinds
PLAT_STATIC = 0
PLAT_SINE = 1
PLAT_DROP = 2


@njit(cache=True, inline="always")
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _rot_exp(w, dt, out):
    wx, wy, wz = w[0] * dt, w[1] * dt, w[2] * dt
    th2 = wx * wx + wy * wy + wz * wz
    th = np.sqrt(th2)
    if th < 1e-10:
        c1, c2 = 1.0, 0.5
    else:
        c1 = np.sin(th) / th
        c2 = (1.0 - np.cos(th)) / th2
    out[0, 0] = 1.0 + c2 * (-wy * wy - wz * wz)
    out[0, 1] = -c1 * wz + c2 * wx * wy
    out[0, 2] = c1 * wy + c2 * wx * wz
    out[1, 0] = c1 * wz + c2 * wx * wy
    out[1, 1] = 1.0 + c2 * (-wx * wx - wz * wz)
    out[1, 2] = -c1 * wx + c2 * wy * wz
    out[2, 0] = -c1 * wy + c2 * wx * wz
    out[2, 1] = c1 * wx + c2 * wy * wz
    out[2, 2] = 1.0 + c2 * (-wx * wx - wy * wy)


@njit(cache=True)
def _orthonormalize(R):
    # quaternion round trip keeps det=+1 and matches spatial.rot_to_quat
    t = R[0, 0] + R[1, 1] + R[2, 2]
    q = np.empty(4)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (R[2, 1] - R[1, 2]) / s
        q[2] = (R[0, 2] - R[2, 0]) / s
        q[3] = (R[1, 0] - R[0, 1]) / s
    else:
        i = 0
        if R[1, 1] > R[0, 0]:
            i = 1
        if R[2, 2] > R[i, i]:
            i = 2
        j = (i + 1) % 3
        k = (i + 2) % 3
        s = np.sqrt(max(1e-15, 1.0 + R[i, i] - R[j, j] - R[k, k])) * 2.0
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w, x, y, z = q[0] / n, q[1] / n, q[2] / n, q[3] / n
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - z * w)
    R[0, 2] = 2 * (x * z + y * w)
    R[1, 0] = 2 * (x * y + z * w)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - x * w)
    R[2, 0] = 2 * (x * z - y * w)
    R[2, 1] = 2 * (y * z + x * w)
    R[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True)
def kin_dyn(parent, jcol, axisl, XpjR, Xpjp, jtlR, jtlp, mass, coml, Icoml,
            mask, Rb, pb, th, qdot,
            R, p, Jall, u, alpha, comw, I0, H, bias, comjac, compos):
    """One kinematics/dynamics pass; fills all output arrays.

    Spatial vectors are referenced at the world origin; ``alpha`` is the
    kinematic bias acceleration (zero generalized acceleration, no gravity);
    ``bias`` includes gravity.
    """
    nl = parent.shape[0]
    nv = mask.shape[1]

    for a in range(3):
        for b in range(3):
            R[0, a, b] = Rb[a, b]
        p[0, a] = pb[a]
    Jall[:] = 0.0
    for a in range(3):
        for b in range(3):
            Jall[a, b] = Rb[a, b]
            Jall[3 + a, 3 + b] = Rb[a, b]
    # skew(pb) @ Rb
    for b in range(3):
        Jall[3, b] = pb[1] * Rb[2, b] - pb[2] * Rb[1, b]
        Jall[4, b] = pb[2] * Rb[0, b] - pb[0] * Rb[2, b]
        Jall[5, b] = pb[0] * Rb[1, b] - pb[1] * Rb[0, b]

    Rj = np.empty((3, 3))
    Rr = np.empty((3, 3))
    tmp3 = np.empty(3)
    a3 = np.empty(3)
    aw = np.empty(3)
    oj = np.empty(3)
    joint_o = np.empty((nl, 3))
    joint_a = np.empty((nl, 3))

    for k in range(nl):
        if k > 0:
            par = parent[k]
            # R_jf = R[par] @ XpjR[k];  o_j = R[par] @ Xpjp[k] + p[par]
            for a in range(3):
                oj[a] = p[par, a]
                for b in range(3):
                    s = 0.0
                    for cnt in range(3):
                        s += R[par, a, cnt] * XpjR[k, cnt, b]
                    Rj[a, b] = s
                for b in range(3):
                    oj[a] += R[par, a, b] * Xpjp[k, b]
            ang = th[jcol[k] - 6]
            for a in range(3):
                a3[a] = axisl[k, a]
            _rot_exp(a3, ang, Rr)
            # R[k] = Rj @ Rr @ jtlR[k];  p[k] = Rj @ Rr @ jtlp[k] + oj
            for a in range(3):
                for b in range(3):
                    s = 0.0
                    for cnt in range(3):
                        s += Rj[a, cnt] * Rr[cnt, b]
                    R[k, a, b] = s
            for a in range(3):
                s = oj[a]
                for b in range(3):
                    s += R[k, a, b] * jtlp[k, b]
                p[k, a] = s
            if jtlR[k, 0, 0] != 1.0 or jtlR[k, 1, 1] != 1.0 or jtlR[k, 2, 2] != 1.0 \
               or jtlR[k, 0, 1] != 0.0 or jtlR[k, 0, 2] != 0.0 or jtlR[k, 1, 2] != 0.0:
                Rtmp = np.empty((3, 3))
                for a in range(3):
                    for b in range(3):
                        s = 0.0
                        for cnt in range(3):
                            s += R[k, a, cnt] * jtlR[k, cnt, b]
                        Rtmp[a, b] = s
                for a in range(3):
                    for b in range(3):
                        R[k, a, b] = Rtmp[a, b]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += Rj[a, b] * axisl[k, b]
                aw[a] = s
            _cross(oj, aw, tmp3)
            col = jcol[k]
            for a in range(3):
                Jall[a, col] = aw[a]
                Jall[3 + a, col] = tmp3[a]
                joint_o[k, a] = oj[a]
                joint_a[k, a] = aw[a]

        # u[k] = (masked Jall) @ qdot
        for a in range(6):
            s = 0.0
            for v in range(nv):
                if mask[k, v] != 0.0:
                    s += Jall[a, v] * qdot[v]
            u[k, a] = s

        # alpha recursion
        if k == 0:
            for a in range(6):
                alpha[0, a] = 0.0
        else:
            par = parent[k]
            rate = qdot[jcol[k]]
            wp = u[par, :3]
            adot = np.empty(3)
            odot = np.empty(3)
            _cross(wp, joint_a[k], adot)
            _cross(wp, joint_o[k], odot)
            for a in range(3):
                odot[a] += u[par, 3 + a]
            t1 = np.empty(3)
            t2 = np.empty(3)
            _cross(odot, joint_a[k], t1)
            _cross(joint_o[k], adot, t2)
            for a in range(3):
                alpha[k, a] = alpha[par, a] + rate * adot[a]
                alpha[k, 3 + a] = alpha[par, 3 + a] + rate * (t1[a] + t2[a])

    # world inertias referenced at the origin + composites
    H[:] = 0.0
    bias[:] = 0.0
    comjac[:] = 0.0
    compos[:] = 0.0
    Icw = np.empty((3, 3))
    tmp33 = np.empty((3, 3))
    fk = np.empty(6)
    Iu = np.empty(6)
    total_mass = 0.0
    for k in range(nl):
        m = mass[k]
        total_mass += m
        cw0 = p[k, 0] + R[k, 0, 0] * coml[k, 0] + R[k, 0, 1] * coml[k, 1] + R[k, 0, 2] * coml[k, 2]
        cw1 = p[k, 1] + R[k, 1, 0] * coml[k, 0] + R[k, 1, 1] * coml[k, 1] + R[k, 1, 2] * coml[k, 2]
        cw2 = p[k, 2] + R[k, 2, 0] * coml[k, 0] + R[k, 2, 1] * coml[k, 1] + R[k, 2, 2] * coml[k, 2]
        comw[k, 0], comw[k, 1], comw[k, 2] = cw0, cw1, cw2
        compos[0] += m * cw0
        compos[1] += m * cw1
        compos[2] += m * cw2
        # Icw = R Icom R^T
        for a in range(3):
            for b in range(3):
                s = 0.0
                for cnt in range(3):
                    s += R[k, a, cnt] * Icoml[k, cnt, b]
                tmp33[a, b] = s
        for a in range(3):
            for b in range(3):
                s = 0.0
                for cnt in range(3):
                    s += tmp33[a, cnt] * R[k, b, cnt]
                Icw[a, b] = s
        # I0[k] referenced at world origin (mcI form with absolute com)
        cx0, cx1, cx2 = cw0, cw1, cw2
        # mC = m * skew(c)
        mC01, mC02, mC12 = -m * cx2, m * cx1, -m * cx0
        # upper-left: Icw + m * skew(c) skew(c)^T
        I0[k, 0, 0] = Icw[0, 0] + m * (cx1 * cx1 + cx2 * cx2)
        I0[k, 0, 1] = Icw[0, 1] - m * cx0 * cx1
        I0[k, 0, 2] = Icw[0, 2] - m * cx0 * cx2
        I0[k, 1, 0] = Icw[1, 0] - m * cx0 * cx1
        I0[k, 1, 1] = Icw[1, 1] + m * (cx0 * cx0 + cx2 * cx2)
        I0[k, 1, 2] = Icw[1, 2] - m * cx1 * cx2
        I0[k, 2, 0] = Icw[2, 0] - m * cx0 * cx2
        I0[k, 2, 1] = Icw[2, 1] - m * cx1 * cx2
        I0[k, 2, 2] = Icw[2, 2] + m * (cx0 * cx0 + cx1 * cx1)
        I0[k, 0, 3] = 0.0;   I0[k, 0, 4] = mC01;  I0[k, 0, 5] = mC02
        I0[k, 1, 3] = -mC01; I0[k, 1, 4] = 0.0;   I0[k, 1, 5] = mC12
        I0[k, 2, 3] = -mC02; I0[k, 2, 4] = -mC12; I0[k, 2, 5] = 0.0
        for a in range(3):
            for b in range(3):
                I0[k, 3 + a, b] = I0[k, b, 3 + a]
                I0[k, 3 + a, 3 + b] = m if a == b else 0.0

        # H += J_k^T I0_k J_k  and  bias += J_k^T f_k   (masked columns)
        acc = np.empty(6)
        for a in range(6):
            acc[a] = alpha[k, a]
        acc[5] -= G_Z  # fictitious base acceleration -g
        for a in range(6):
            s = 0.0
            t = 0.0
            for b in range(6):
                s += I0[k, a, b] * acc[b]
                t += I0[k, a, b] * u[k, b]
            fk[a] = s
            Iu[a] = t
        w0, w1, w2 = u[k, 0], u[k, 1], u[k, 2]
        v0, v1, v2 = u[k, 3], u[k, 4], u[k, 5]
        fk[0] += w1 * Iu[2] - w2 * Iu[1] + v1 * Iu[5] - v2 * Iu[4]
        fk[1] += w2 * Iu[0] - w0 * Iu[2] + v2 * Iu[3] - v0 * Iu[5]
        fk[2] += w0 * Iu[1] - w1 * Iu[0] + v0 * Iu[4] - v1 * Iu[3]
        fk[3] += w1 * Iu[5] - w2 * Iu[4]
        fk[4] += w2 * Iu[3] - w0 * Iu[5]
        fk[5] += w0 * Iu[4] - w1 * Iu[3]

        IJ = np.empty((6, nv))
        for v in range(nv):
            if mask[k, v] != 0.0:
                for a in range(6):
                    s = 0.0
                    for b in range(6):
                        s += I0[k, a, b] * Jall[b, v]
                    IJ[a, v] = s
        for v in range(nv):
            if mask[k, v] == 0.0:
                continue
            for a in range(6):
                bias[v] += Jall[a, v] * fk[a]
            for w in range(v, nv):
                if mask[k, w] == 0.0:
                    continue
                s = 0.0
                for a in range(6):
                    s += Jall[a, v] * IJ[a, w]
                H[v, w] += s
        # com jacobian: m/M * (Jlin - skew(cw) Jang) summed
        for v in range(nv):
            if mask[k, v] == 0.0:
                continue
            ja0, ja1, ja2 = Jall[0, v], Jall[1, v], Jall[2, v]
            comjac[0, v] += m * (Jall[3, v] - (cx1 * ja2 - cx2 * ja1))
            comjac[1, v] += m * (Jall[4, v] - (cx2 * ja0 - cx0 * ja2))
            comjac[2, v] += m * (Jall[5, v] - (cx0 * ja1 - cx1 * ja0))

    for v in range(nv):
        for w in range(v):
            H[v, w] = H[w, v]
    for a in range(3):
        compos[a] /= total_mass
        for v in range(nv):
            comjac[a, v] /= total_mass


@njit(cache=True)
def _platform_pose_vel(kind, par, t, Rp, pp, wp, vp):
    """Pose (Rp, pp) and spatial velocity (wp at origin pp, vp) of a platform."""
    roll = 0.0
    pitch = 0.0
    droll = 0.0
    dpitch = 0.0
    pp[0], pp[1], pp[2] = par[0], par[1], par[2]
    vp[0] = 0.0; vp[1] = 0.0; vp[2] = 0.0
    if kind == PLAT_STATIC:
        roll, pitch = par[3], par[4]
    elif kind == PLAT_SINE:
        ramp = par[12]
        env = 1.0
        denv = 0.0
        if ramp > 0.0 and t < ramp:
            env = t / ramp
            denv = 1.0 / ramp
        wz = 2.0 * np.pi * par[4]
        sz = np.sin(wz * t + par[5])
        cz = np.cos(wz * t + par[5])
        pp[2] = par[2] + env * par[3] * sz
        vp[2] = denv * par[3] * sz + env * par[3] * wz * cz
        wr = 2.0 * np.pi * par[7]
        sr = np.sin(wr * t + par[8])
        cr = np.cos(wr * t + par[8])
        roll = env * par[6] * sr
        droll = denv * par[6] * sr + env * par[6] * wr * cr
        wq = 2.0 * np.pi * par[10]
        sq = np.sin(wq * t + par[11])
        cq = np.cos(wq * t + par[11])
        pitch = env * par[9] * sq
        dpitch = denv * par[9] * sq + env * par[9] * wq * cq
    elif kind == PLAT_DROP:
        if t >= par[3]:
            pp[2] = par[2] - par[4]
            roll, pitch = par[5], par[6]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    # R = Rx(roll) @ Ry(pitch)
    Rp[0, 0] = cp;       Rp[0, 1] = 0.0; Rp[0, 2] = sp
    Rp[1, 0] = sr * sp;  Rp[1, 1] = cr;  Rp[1, 2] = -sr * cp
    Rp[2, 0] = -cr * sp; Rp[2, 1] = sr;  Rp[2, 2] = cr * cp
    # omega = droll * x + Rx(roll) @ (dpitch * y)
    wp[0] = droll
    wp[1] = dpitch * cr
    wp[2] = dpitch * sr


@njit(cache=True)
def plant_steps(parent, jcol, axisl, XpjR, Xpjp, jtlR, jtlp, mass, coml,
                Icoml, mask,
                cf_link, cf_offR, cf_offp, cf_corners,
                plat_kind, plat_par, plat_ext, cf_plat,
                kp, kd, ki, taumax, integ_clamp,
                k_n, b_n, k_t, b_t, mu, lpf_alpha,
                Rb, pb, qdot, th, servo_integ, anchors, anchor_on, sensor_w,
                q_cmd, t0, n_sub, dt,
                R, p, Jall, u, alpha, comw, I0, H, bias, comjac, compos,
                raw_w, audit):
    """Advance the plant ``n_sub`` substeps of size ``dt``; mutates state.

    Returns 1 on numerical blow-up, else 0.  ``audit`` accumulates
    [servo work, contact work, gravity work] using midpoint velocities.
    """
    nv = mask.shape[1]
    na = nv - 6
    ncf = cf_link.shape[0]
    Rs = np.empty((3, 3))
    ps = np.empty(3)
    Rp = np.empty((3, 3))
    pp = np.empty(3)
    wpl = np.empty(3)
    vpl = np.empty(3)
    corner = np.empty(3)
    cvel = np.empty(3)
    lvel = np.empty(3)
    floc = np.empty(3)
    fw = np.empty(3)
    rel = np.empty(3)
    tmp = np.empty(3)
    gen = np.empty(nv)
    tau = np.empty(na)
    Rnew = np.empty((3, 3))

    for step in range(n_sub):
        t = t0 + step * dt
        kin_dyn(parent, jcol, axisl, XpjR, Xpjp, jtlR, jtlp, mass, coml,
                Icoml, mask, Rb, pb, th, qdot,
                R, p, Jall, u, alpha, comw, I0, H, bias, comjac, compos)

        for v in range(nv):
            gen[v] = -bias[v]

        # joint servo: saturated stiffness + integral, damping handled
        # implicitly (dt*kd added to the H diagonal) so that stiff gains on
        # light distal links stay stable at the plant substep
        for j in range(na):
            e = q_cmd[j] - th[j]
            if ki[j] > 0.0:
                servo_integ[j] += e * dt
                if servo_integ[j] > integ_clamp[j]:
                    servo_integ[j] = integ_clamp[j]
                elif servo_integ[j] < -integ_clamp[j]:
                    servo_integ[j] = -integ_clamp[j]
            tq = kp[j] * e + ki[j] * servo_integ[j]
            if tq > taumax[j]:
                tq = taumax[j]
            elif tq < -taumax[j]:
                tq = -taumax[j]
            tau[j] = tq
            gen[6 + j] += tq - kd[j] * qdot[6 + j]
            H[6 + j, 6 + j] += dt * kd[j]

        # contacts
        for i in range(ncf):
            lk = cf_link[i]
            for a in range(3):
                s = p[lk, a]
                for b in range(3):
                    s += R[lk, a, b] * cf_offp[i, b]
                ps[a] = s
                for b in range(3):
                    s2 = 0.0
                    for cnt in range(3):
                        s2 += R[lk, a, cnt] * cf_offR[i, cnt, b]
                    Rs[a, b] = s2
            pi = cf_plat[i]
            _platform_pose_vel(plat_kind[pi], plat_par[pi], t, Rp, pp, wpl, vpl)
            fsum0 = 0.0; fsum1 = 0.0; fsum2 = 0.0
            msum0 = 0.0; msum1 = 0.0; msum2 = 0.0
            wl = u[lk, :3]
            for ci in range(4):
                cx_, cy_ = cf_corners[i, ci, 0], cf_corners[i, ci, 1]
                for a in range(3):
                    corner[a] = ps[a] + Rs[a, 0] * cx_ + Rs[a, 1] * cy_
                # corner velocity: v(x) = u.lin + w x x
                _cross(wl, corner, cvel)
                for a in range(3):
                    cvel[a] += u[lk, 3 + a]
                # platform-local position and relative velocity
                for a in range(3):
                    rel[a] = corner[a] - pp[a]
                lx = Rp[0, 0] * rel[0] + Rp[1, 0] * rel[1] + Rp[2, 0] * rel[2]
                ly = Rp[0, 1] * rel[0] + Rp[1, 1] * rel[1] + Rp[2, 1] * rel[2]
                lz = Rp[0, 2] * rel[0] + Rp[1, 2] * rel[1] + Rp[2, 2] * rel[2]
                if lz >= 0.0 or abs(lx) > plat_ext[pi, 0] or abs(ly) > plat_ext[pi, 1]:
                    anchor_on[i, ci] = 0
                    continue
                _cross(wpl, rel, tmp)
                for a in range(3):
                    tmp[a] = cvel[a] - vpl[a] - tmp[a]   # relative velocity, world
                for a in range(3):
                    lvel[a] = Rp[0, a] * tmp[0] + Rp[1, a] * tmp[1] + Rp[2, a] * tmp[2]
                fn = -k_n * lz - b_n * lvel[2]
                if fn < 0.0:
                    fn = 0.0
                if anchor_on[i, ci] == 0:
                    anchors[i, ci, 0] = lx
                    anchors[i, ci, 1] = ly
                    anchor_on[i, ci] = 1
                ftx = -k_t * (lx - anchors[i, ci, 0]) - b_t * lvel[0]
                fty = -k_t * (ly - anchors[i, ci, 1]) - b_t * lvel[1]
                ft = np.sqrt(ftx * ftx + fty * fty)
                cap = mu * fn
                if ft > cap:
                    scale = cap / ft if ft > 0.0 else 0.0
                    ftx *= scale
                    fty *= scale
                    anchors[i, ci, 0] = lx + (ftx + b_t * lvel[0]) / k_t
                    anchors[i, ci, 1] = ly + (fty + b_t * lvel[1]) / k_t
                floc[0], floc[1], floc[2] = ftx, fty, fn
                for a in range(3):
                    fw[a] = Rp[a, 0] * ftx + Rp[a, 1] * fty + Rp[a, 2] * fn
                fsum0 += fw[0]; fsum1 += fw[1]; fsum2 += fw[2]
                r0 = corner[0] - ps[0]
                r1 = corner[1] - ps[1]
                r2 = corner[2] - ps[2]
                msum0 += r1 * fw[2] - r2 * fw[1]
                msum1 += r2 * fw[0] - r0 * fw[2]
                msum2 += r0 * fw[1] - r1 * fw[0]

            # raw wrench in the sole frame
            for a in range(3):
                raw_w[i, a] = Rs[0, a] * msum0 + Rs[1, a] * msum1 + Rs[2, a] * msum2
                raw_w[i, 3 + a] = Rs[0, a] * fsum0 + Rs[1, a] * fsum1 + Rs[2, a] * fsum2
            for a in range(6):
                sensor_w[i, a] += lpf_alpha * (raw_w[i, a] - sensor_w[i, a])

            # generalized force: wrench referenced at world origin through
            # the foot link's masked world-origin Jacobian
            m0 = msum0 + ps[1] * fsum2 - ps[2] * fsum1
            m1 = msum1 + ps[2] * fsum0 - ps[0] * fsum2
            m2 = msum2 + ps[0] * fsum1 - ps[1] * fsum0
            for v in range(nv):
                if mask[lk, v] != 0.0:
                    gen[v] += (Jall[0, v] * m0 + Jall[1, v] * m1 + Jall[2, v] * m2
                               + Jall[3, v] * fsum0 + Jall[4, v] * fsum1
                               + Jall[5, v] * fsum2)

        qdd = np.linalg.solve(H, gen)

        # work audit with midpoint velocities (semi-implicit update is linear
        # in time, so the midpoint rule is exact against the frozen-H energy)
        sw = 0.0
        for j in range(na):
            vm = qdot[6 + j] + 0.5 * dt * qdd[6 + j]
            vnew = qdot[6 + j] + dt * qdd[6 + j]
            sw += vm * (tau[j] - kd[j] * vnew)
        audit[0] += dt * sw
        cw_ = 0.0
        gw = 0.0
        mtot = mass.sum()
        for v in range(nv):
            vm = qdot[v] + 0.5 * dt * qdd[v]
            ge = gen[v] + bias[v]
            if v >= 6:
                ge -= dt * kd[v - 6] * qdd[v]   # effective (implicit) damping
            cw_ += vm * ge
            gw += vm * (G_Z * mtot * comjac[2, v])
        # contact work = total applied work minus servo work
        audit[1] += dt * cw_ - dt * sw
        audit[2] += dt * gw

        n2 = 0.0
        for v in range(nv):
            qdot[v] += dt * qdd[v]
            n2 += qdot[v] * qdot[v]
        if n2 > 1e6 or not np.isfinite(n2):
            return 1

        # integrate pose with the updated velocity
        _rot_exp(qdot[:3], dt, Rnew)
        Rtmp = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                s = 0.0
                for cnt in range(3):
                    s += Rb[a, cnt] * Rnew[cnt, b]
                Rtmp[a, b] = s
        for a in range(3):
            s = 0.0
            for b in range(3):
                s += Rb[a, b] * qdot[3 + b]
            pb[a] += dt * s
        for a in range(3):
            for b in range(3):
                Rb[a, b] = Rtmp[a, b]
        _orthonormalize(Rb)
        for j in range(na):
            th[j] += dt * qdot[6 + j]
    return 0
