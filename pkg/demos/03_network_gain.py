"""Traffic of centralized training versus federated training.

Raw data would cross the network once. The federated run moves the
model down and back up for every selected client in every round.

    python3 demos/03_network_gain.py
"""
from fedstlf import fedsim as fs
from fedstlf import metrics as mt

participants = [f"house_{k:03d}" for k in range(180)]
params = mt.NetLoadParams.with_total_data(participants, 16_000.0, model_size_kb=1.9)
topology = mt.Topology(default_hops=1)

central = mt.centralized_load(params, topology, participants)
print(f"centralized: {central:.1f} Kb")

for number, (k, epochs) in fs.SCENARIO_PRESETS.items():
    # selections only need the right count per round; ids do not change the sum
    selections = [participants[:k]] * 20
    federated = mt.federated_load(params, topology, selections)
    gain = mt.network_gain(federated, central)
    print(f"scenario {number} (K={k:2d}, E={epochs}): federated {federated:7.1f} Kb  gain {gain:.2%}")

# counting only one direction of the exchange
one_way = mt.NetLoadParams.with_total_data(participants, 16_000.0, model_size_kb=1.9, direction_multiplier=1)
federated = mt.federated_load(one_way, topology, [participants[:5]] * 20)
print(f"scenario 1, one direction only: gain {mt.network_gain(federated, central):.4%}")
