from .experiment import ExperimentRunner
from .models.schema import MerConfig, SynthConfig, TrainConfig

__all__ = ['ExperimentRunner', 'MerConfig', 'SynthConfig', 'TrainConfig']
