from .validators import LabError, ContractError, NumericError

__all__ = ['LabError', 'ContractError', 'NumericError']
