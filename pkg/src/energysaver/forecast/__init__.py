"""Monthly LSTM load forecasting over stored consumption."""
from .data import (DatasetError, DegenerateScaler, Scaler, Series, SplitError, WindowedDataset,
                   aggregate, denormalize, fit_scaler, fixed_base_index, make_windows, normalize,
                   split_by_boundary)
from .job import (FORECAST_NS, ForecastConfig, ForecastRegistry, ForecastReport, InsufficientData, JobError,
                  build_report, load_series, run_forecast_job)
from .lstm import LstmModel, NumericError, lstm_backward, lstm_forward
from .metrics import Metrics, evaluate
from .schedule import MonthlyScheduler, first_business_day, schedule_monthly
from .train import Optimizer, TrainConfig, TrainingError, predict_horizon, train

__all__ = [
    "DatasetError", "DegenerateScaler", "Scaler", "Series", "SplitError", "WindowedDataset",
    "aggregate", "denormalize", "fit_scaler", "fixed_base_index", "make_windows", "normalize",
    "split_by_boundary",
    "FORECAST_NS", "ForecastConfig", "ForecastRegistry", "ForecastReport", "InsufficientData", "JobError",
    "build_report", "load_series", "run_forecast_job",
    "LstmModel", "NumericError", "lstm_backward", "lstm_forward",
    "Metrics", "evaluate",
    "MonthlyScheduler", "first_business_day", "schedule_monthly",
    "Optimizer", "TrainConfig", "TrainingError", "predict_horizon", "train",
]
