"""Retrain the global model on each household's own data.

    python3 demos/04_personalization.py
"""
import numpy as np

from fedstlf import dataset as ds
from fedstlf import fedsim as fs

clients = [ds.build_client_dataset(s) for s in ds.synth_generate(8, 20, seed=5)]
config = fs.ScenarioConfig(rounds=6, subset_size=4, layer_widths=(1, 16), seed=5)
global_model, _ = fs.run_scenario(config, clients, evaluate=False)

print("client        train MSE before -> after   test MAPE before -> after")
rows = []
for c in clients:
    local = fs.personalize(global_model, c, epochs=5, lr=0.005, optimizer="sgd", seed=5)
    before = fs.evaluate_global(global_model, [c]).per_client[c.client_id]
    after = fs.evaluate_global(local, [c]).per_client[c.client_id]
    mse = fs.train_mse(global_model, c), fs.train_mse(local, c)
    rows.append((*mse, before.mape, after.mape))
    print(f"{c.client_id}   {mse[0]:.5f} -> {mse[1]:.5f}       {before.mape:6.2f}% -> {after.mape:6.2f}%")

means = np.mean(rows, axis=0)
print(f"\nmean          {means[0]:.5f} -> {means[1]:.5f}       {means[2]:6.2f}% -> {means[3]:6.2f}%")
