"""
Losses, prototypes and sub-camera environments
==============================================

A short tour of the pieces a training step is built from.
"""

import numpy as np

from iici.config import RunConfig
from iici.dataset import generate_synthetic, make_sct_split
from iici.encoder import init_params
from iici.envsplit import agreement_up_to_relabel, refresh
from iici.losses import LossConfig, loss_inter1, loss_mcnl
from iici.memory import PrototypeBank
from iici.rng import substream

rng = np.random.default_rng(0)
F = rng.standard_normal((16, 4))
F /= np.linalg.norm(F, axis=1, keepdims=True)
y = np.repeat(np.arange(8), 2)
c = np.repeat(np.arange(2), 8)

# with a single cross-camera negative the top-K hinge is the MCNL loss
cfg = LossConfig()
print("MCNL:", loss_mcnl(F, y, c, cfg)[0], " inter1(K1=1):", loss_inter1(F, y, c, cfg, K1=1)[0])
for k in (1, 3, 10):
    print(f"inter1 with K1={k}:", round(loss_inter1(F, y, c, cfg, K1=k)[0], 4))

# prototypes move towards new features and stay on the unit sphere
bank = PrototypeBank(F[::2], mu=0.2)
bank.update(0, -F[0])
print("prototype norm after update:", np.linalg.norm(bank.M[0]))

# the environment split clusters identities of a camera by encoder style;
# on the benchmark it recovers the planted styles
run = RunConfig()
sct = make_sct_split(generate_synthetic(run.synth(0)), 0)
params = init_params(sct.D_raw, run.hidden, run.dim, substream(0, "init"))
env = refresh(sct, params, 0, run.train(0).env)
truth = np.zeros(sct.Y, np.int64)
truth[sct.y] = sct.c * 100 + sct.style_truth
print("environments:", env.SC, " agreement with planted styles:",
      agreement_up_to_relabel(env.env_of_id, truth))
