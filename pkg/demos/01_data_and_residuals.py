"""Generate trajectories, observe them sparsely, and check the residual.

Walks through the data side of the package: Gaussian-random-field initial
conditions, RK4 rollout of the nonlinear shallow water system, exact
point-sampling observation, and the one-step residual F that the training
losses are built on (zero on pairs the generator produced).
"""
import numpy as np

from partialpde import fd
from partialpde.datagen import GRFConfig, IcConfig, generate_trajectory, initial_state, sample_grf
from partialpde.grid import ObservationSpec, observe
from partialpde.systems import make_system

n = 32
system = make_system("nswe")
print(f"system: {system.id}, channels (ux, uy, h)")

# a smooth random field: same seed -> same field, exact mean/std
f1 = sample_grf((n, n), GRFConfig(mean=0.0, std=1.0, length_scale=0.25, seed=42))
f2 = sample_grf((n, n), GRFConfig(mean=0.0, std=1.0, length_scale=0.25, seed=42))
print(f"GRF determinism: identical={np.array_equal(f1, f2)}, "
      f"mean={f1.mean():.2e}, std={f1.std():.4f}")

ic = initial_state(system, (n, n), seed=3, ic=IcConfig())
traj = generate_trajectory(system, ic, T=0.5, dt=0.01)
print(f"trajectory: {traj.frames.shape[0]} frames of shape {traj.frames.shape[1:]}, "
      f"min depth {traj.frames[:, 2].min():.3f} (stays positive)")

# partial observation: a 7x7 lattice of a 32x32 field is < 4.79% of the pixels
spec = ObservationSpec.regular(5, (n, n))
obs = observe(traj.frames, spec)
print(f"observed {spec.n_points} of {n * n} points "
      f"({100 * spec.n_points / n ** 2:.2f}%), shape per frame {obs.shape[2:]}")

# the residual F(psi_t, psi_{t+tau}) = rk4(psi_t) - psi_{t+tau} vanishes on
# adjacent generated frames because the loss reuses the generator's scheme
ctx = fd.StepContext(w=0.01, dx=1 / n, dy=1 / n, system=system)
worst = max(float(np.abs(fd.residual_F(ctx, traj.frames[k], traj.frames[k + 1]).value).max())
            for k in range(traj.frames.shape[0] - 1))
print(f"max |residual| over all adjacent pairs: {worst:.2e}")

# ... and it is informative for inconsistent pairs
res = fd.residual_F(ctx, traj.frames[0], traj.frames[0]).value
print(f"residual of a frozen (non-evolving) state: {np.abs(res).max():.2e}")
print(f"F^2 loss of the frozen pair: {float(fd.pde_loss(res).value):.3e}")
