"""Compare the numba kernels with their numpy twins.

Times each kernel on a random image, then times whole fitting iterations
with each backend (the backend is fixed at import, so that part runs in a
subprocess with OMNEDIT_DISABLE_NUMBA set or cleared).

    python benchmarks/bench_kernels.py --size 256 --repeat 20
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from omnedit import kernels

FIT_SNIPPET = """
import time
from omnedit import kernels, omn, synth
pr = synth.chain_pair(0, {size})
script = pr.fit_script()
cfg = omn.FitConfig()
omn.loss_and_grad(script, pr.source, pr.target, cfg)  # warm-up / compile
t = time.perf_counter()
for _ in range({iters}):
    omn.loss_and_grad(script, pr.source, pr.target, cfg)
print(kernels.BACKEND, (time.perf_counter() - t) / {iters})
"""


def kernel_cases(size, rng):
    img = rng.random((size, size, 3))
    hsv = kernels.numpy_impl.rgb_to_hsv(img)
    w = rng.uniform(0.2, 3.0, 8)
    g = rng.standard_normal(img.shape)
    region = np.zeros((size, size), bool)
    region[size // 4: size // 2, size // 4: size // 2] = True
    return {
        "rgb_to_hsv": (img,),
        "hsv_to_rgb": (hsv,),
        "laplacian": (img,),
        "laplacian_adjoint": (g,),
        "curve_apply": (img, w),
        "curve_slope": (img, w),
        "curve_param_grad": (img, w, g),
        "diffuse_fill": (img, region, 1e-4, 500),
    }


def time_call(fn, args, repeat):
    fn(*args)  # compile on first call
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def fit_iteration(backend_numba, size, iters):
    env = dict(os.environ, OMNEDIT_DISABLE_NUMBA="0" if backend_numba else "1")
    code = FIT_SNIPPET.format(size=size, iters=iters)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, sec = out.stdout.split()
    return name, float(sec)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--fit-iters", type=int, default=20)
    args = ap.parse_args()

    if kernels.numba_impl is None:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"kernels on {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, case in kernel_cases(args.size, rng).items():
        t_np = time_call(getattr(kernels.numpy_impl, name), case, args.repeat)
        t_nb = time_call(getattr(kernels.numba_impl, name), case, args.repeat)
        print(f"{name:<18} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>7.1f}x")

    print(f"\nloss+gradient per fit iteration, chain pair at {args.size}x{args.size}")
    res = dict(fit_iteration(flag, args.size, args.fit_iters) for flag in (False, True))
    for name, sec in res.items():
        print(f"{name:<8} {1e3 * sec:>8.2f} ms")
    print(f"speedup  {res['numpy'] / res['numba']:.1f}x")


if __name__ == "__main__":
    main()
