"""A trained model bundle: network weights plus everything sampling needs."""
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetMeta
from .diffusion import NoiseSchedule, make_schedule
from .nn import MLP, load_weights, save_weights


@dataclass(eq=False)
class Model:
    net: MLP
    sched: NoiseSchedule
    meta: DatasetMeta
    train_config: dict

    @property
    def cond_norm(self):
        return self.meta.cond_norm

    @property
    def x_norm(self):
        return self.meta.x_norm

    @property
    def metric_scale(self):
        return np.asarray(self.meta.metric_std, dtype=float)

    def save(self, path):
        header = {
            "schedule": self.sched.to_dict(),
            "dataset_meta": self.meta.to_dict(),
            "train_config": self.train_config,
        }
        save_weights(path, self.net, header)

    @classmethod
    def load(cls, path):
        net, head = load_weights(path)
        try:
            sched = make_schedule(**head["schedule"])
            meta = DatasetMeta.from_dict(head["dataset_meta"])
        except (KeyError, TypeError) as e:
            raise ValueError(f"{path}: weights header lacks model metadata ({e})") from e
        return cls(net, sched, meta, head.get("train_config", {}))
