"""A few FederatedAveraging rounds on synthetic households.

Twelve clients, two of them nearly flat. The flat ones fail the
eligibility gate and never see the model.

    python3 demos/02_federated_rounds.py
"""
from fedstlf import dataset as ds
from fedstlf import fedsim as fs

series = ds.synth_generate(12, 30, seed=3, flat_fraction=0.15)
clients = [ds.build_client_dataset(s) for s in series]
for c in clients:
    print(f"{c.client_id}  n_k={c.n_k:4d}  load std {c.load_std:.3f} kW")

eligible = fs.eligible_clients(clients, threshold=0.05, min_records=24)
print(f"\n{len(eligible)} of {len(clients)} clients are eligible")

config = fs.ScenarioConfig(rounds=8, subset_size=4, layer_widths=(1, 16), seed=3)


def show(report, params):
    ev = report.evaluation
    print(
        f"round {report.round_index}: {', '.join(report.selected_client_ids)}"
        f"  mean RMSE {ev.rmse.mean:.3f} kW  mean MAPE {ev.mape.mean:.1f}%"
    )


final, reports = fs.run_scenario(config, clients, on_round=show)

naive = fs.evaluate_persistence(clients)
print(f"\npersistence baseline: mean RMSE {naive.rmse.mean:.3f} kW  mean MAPE {naive.mape.mean:.1f}%")
print("final checksum", reports[-1].global_checksum)
