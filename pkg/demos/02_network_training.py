# The calibration network from the ground up: a gradient check on a tiny
# network, then a short global training run and per-month fine-tuning.
# python demos/02_network_training.py

import numpy as np

from magcal.neuralnet import (TrainConfig, finetune_month, forward, gradient, init_params,
                              train_global, validation_loss, zero_predictor_loss)
from magcal.preprocess import preprocess1, preprocess2, preprocess3, prepare_month
from magcal.synthgen import MissionConfig, generate_month

# %% analytic gradient against central differences, one weight at a time
rng = np.random.default_rng(0)
p = init_params([f"f_{i:02d}" for i in range(4)], hidden=(2, 2), seed=1)
p.weights[-1][:] = rng.normal(size=p.weights[-1].shape)  # output layer starts at zero; perturb it
x, y, w = rng.normal(size=(6, 4)), rng.normal(size=(6, 3)), np.ones(6)
_, grads = gradient(p, x, y, w)
h = 1e-5
W = p.weights[0]
num = np.zeros_like(W)
for idx in np.ndindex(W.shape):
    old = W[idx]
    W[idx] = old + h
    up = gradient(p, x, y, w)[0]
    W[idx] = old - h
    down = gradient(p, x, y, w)[0]
    W[idx] = old
    num[idx] = (up - down) / (2 * h)
print("first layer, max |analytic - numeric|:", np.abs(grads[0] - num).max())

# %% a three-month mission, cleaned
cfg = MissionConfig(n_months=3, samples_per_day=240, seed=11)
tables = [prepare_month(generate_month(i, cfg)) for i in range(cfg.n_months)]
g = preprocess2([preprocess1(t) for t in tables])
clean = [preprocess3(t, g, seed=i)[0] for i, t in enumerate(tables)]

# %% global model, small enough for a laptop
tc = TrainConfig(hidden=(32, 16), epochs=12, finetune_epochs=5, step_epochs=5)
model, rep = train_global(clean, tc)
print("epoch losses:", np.round(rep.epoch_losses, 1))
print("validation loss", round(rep.validation_loss, 2), "vs predicting zero", round(zero_predictor_loss(clean), 2))

# %% each month gets its own continuation of the global model
for c in clean:
    tuned, r = finetune_month(model, c, tc)
    print(c.month_id, "global", round(validation_loss(model, [c]), 2), "fine-tuned", round(r.validation_loss, 2))

d_hat = forward(model, clean[0].features[:5])
print("predicted disturbance, first rows:\n", d_hat.round(1))
