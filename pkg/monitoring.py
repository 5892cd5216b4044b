"""
Run monitoring for the PoBO toolkit.
Structured JSON logging, solver traces and performance measurements.
"""

import json
import logging
import os
import time
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Optional

import psutil

from config import settings


class RunLogger:
    """Structured logging with separate app, solver and performance streams"""

    def __init__(self, name: str = "pobo", log_dir: str = settings.LOG_DIR,
                 to_file: bool = settings.LOG_TO_FILE, debug: bool = settings.DEBUG):
        self.name = name
        self.log_dir = Path(log_dir)
        self.to_file = to_file
        self.debug = debug
        self.setup_loggers()

    def setup_loggers(self):
        """Setup structured logging with one handler per stream"""
        self.app_logger = logging.getLogger(f"{self.name}.app")
        self.app_logger.setLevel(logging.INFO)

        # Solver traces (restarts, penalty updates, IPM gaps)
        self.solver_logger = logging.getLogger(f"{self.name}.solver")
        self.solver_logger.setLevel(logging.DEBUG if self.debug else logging.INFO)

        self.performance_logger = logging.getLogger(f"{self.name}.performance")
        self.performance_logger.setLevel(logging.INFO)

        detailed_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
        )
        json_formatter = logging.Formatter('%(message)s')

        # Handlers are attached once per process even if the logger is rebuilt
        if self.to_file and not self.app_logger.handlers:
            self.log_dir.mkdir(parents=True, exist_ok=True)

            app_handler = logging.FileHandler(self.log_dir / 'app.log')
            app_handler.setFormatter(detailed_formatter)
            self.app_logger.addHandler(app_handler)

            solver_handler = logging.FileHandler(self.log_dir / 'solver.log')
            solver_handler.setFormatter(detailed_formatter)
            self.solver_logger.addHandler(solver_handler)

            performance_handler = logging.FileHandler(self.log_dir / 'performance.log')
            performance_handler.setFormatter(json_formatter)
            self.performance_logger.addHandler(performance_handler)

        if self.debug and not self.solver_logger.handlers:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(detailed_formatter)
            self.app_logger.addHandler(console_handler)
            self.solver_logger.addHandler(console_handler)

    def log_event(self, event: str, details: Dict[str, Any] = None):
        """Log a pipeline event with structured data"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'event': event,
            'details': details or {}
        }
        self.app_logger.info(f"Event: {json.dumps(log_data, default=jsonable)}")

    def log_solver(self, solver: str, details: Dict[str, Any] = None, level: int = logging.INFO):
        """Log solver progress (restarts, feasibility, convergence)"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'solver': solver,
            'details': details or {}
        }
        self.solver_logger.log(level, f"Solver: {json.dumps(log_data, default=jsonable)}")

    def log_error(self, error: Exception, context: str = None):
        """Log a failure with its structured payload when it has one"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'context': context,
            'error_type': type(error).__name__,
            'details': error.to_dict() if hasattr(error, 'to_dict') else {'message': str(error)}
        }
        self.app_logger.error(f"Error: {json.dumps(log_data, default=jsonable)}")

    def log_performance(self, operation: str, duration: float, details: Dict[str, Any] = None):
        """Log performance metrics"""
        log_data = {
            'timestamp': datetime.now().isoformat(),
            'operation': operation,
            'duration_ms': round(duration * 1000, 2),
            'resources': resource_snapshot(),
            'details': details or {}
        }
        self.performance_logger.info(json.dumps(log_data, default=jsonable))


def resource_snapshot() -> Dict[str, float]:
    """Resident memory and CPU time of the current process"""
    process = psutil.Process(os.getpid())
    cpu = process.cpu_times()
    return {
        'rss_mb': round(process.memory_info().rss / (1024 ** 2), 2),
        'cpu_user_s': round(cpu.user, 3),
        'cpu_system_s': round(cpu.system, 3),
    }


def jsonable(value):
    # numpy scalars and arrays
    if hasattr(value, 'tolist'):
        return value.tolist()
    return str(value)


class PerformanceMonitor:
    """Decorator for monitoring function performance"""

    def __init__(self, logger: RunLogger):
        self.logger = logger

    def monitor(self, operation_name: Optional[str] = None):
        """Decorator to monitor function execution time"""
        def decorator(func):
            @wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.perf_counter()
                operation = operation_name or f"{func.__module__}.{func.__name__}"

                try:
                    result = func(*args, **kwargs)
                    duration = time.perf_counter() - start_time
                    self.logger.log_performance(operation, duration, {'status': 'success'})
                    return result
                except Exception as e:
                    duration = time.perf_counter() - start_time
                    self.logger.log_performance(operation, duration, {
                        'status': 'error',
                        'error': str(e)
                    })
                    raise
            return wrapper
        return decorator


# Global monitoring instances
run_logger = RunLogger()
performance_monitor = PerformanceMonitor(run_logger)

# Export main monitoring decorator
monitor_performance = performance_monitor.monitor
