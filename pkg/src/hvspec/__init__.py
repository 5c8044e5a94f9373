from .analyze import CountTable
from .analyze import spectrograph_inequality
from .model import HiddenVariableModel
from .model import SettingPair
from .model import SettingsQuad
from .model import SpectrographConfig
from .qm_oracle import EberhardtState
from .simulate import Experiment
from .simulate import TimingConfig

__version__ = "0.1.0"

__all__ = ["CountTable", "EberhardtState", "Experiment", "HiddenVariableModel", "SettingPair",
           "SettingsQuad", "SpectrographConfig", "TimingConfig", "spectrograph_inequality"]
