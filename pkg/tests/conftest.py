import numpy as np
import pytest

from uavfl import kernels
from uavfl.data import make_blobs, partition_dataset
from uavfl.energy import ChannelConfig, ComputePowerConfig
from uavfl.fleet import DroneState, Fleet, Position
from uavfl.methods import SimEnv
from uavfl.model import ModelLayout, init_params

BACKEND_NAMES = kernels.available_backends()


@pytest.fixture(params=BACKEND_NAMES)
def backend(request):
    return kernels.get_backend(request.param)


def build_fleet(positions, capacity_wh=274.0, clusters=None, heads=None,
                area=(10.0, 10.0)) -> Fleet:
    """Hand-built fleet from explicit (x, y[, z]) positions."""
    drones = []
    for i, pos in enumerate(positions):
        xyz = tuple(pos) + (0.0,) * (3 - len(pos))
        drones.append(DroneState(
            id=i,
            position=Position(*xyz),
            battery_capacity=capacity_wh,
            battery_remaining=capacity_wh,
            cluster_id=None if clusters is None else clusters[i],
            is_head=False if heads is None else (i in heads),
        ))
    return Fleet(drones=drones, area=area, rng_seed=0)


def make_env(fleet, *, n_features=4, n_classes=3, per_drone=40, seed=0,
             eval_size=150, identical_data=False, hidden_units=0,
             cluster_std=1.2, message_bytes=None, client_seed_fn=None,
             channel=None, compute=None) -> SimEnv:
    """Small synthetic environment sized for sub-second scheduler tests."""
    n = fleet.n
    total = eval_size + per_drone * n
    source = make_blobs(total, n_features, n_classes, cluster_std, seed)
    eval_data = source.take(np.arange(eval_size))
    pool = source.take(np.arange(eval_size, total))
    if identical_data:
        part = pool.take(np.arange(per_drone))
        partitions = [part] * n
    else:
        partitions = partition_dataset(pool, n, per_drone, 0.0, seed)
    for drone in fleet.drones:
        drone.partition_id = drone.id
    layout = ModelLayout(n_features, n_classes, hidden_units)
    return SimEnv(
        partitions=partitions,
        eval_data=eval_data,
        init=init_params(layout, seed),
        channel=channel or ChannelConfig(),
        compute=compute or ComputePowerConfig(),
        message_bytes=message_bytes,
        client_seed_fn=client_seed_fn,
    )
