import functools
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass


@dataclass
class ExperimentTally:
    checks: int = 0
    passed: int = 0
    failed: int = 0
    errors: int = 0
    runtime_s: float = 0.0


# Process-wide progress board: the check in flight, per-experiment tallies and a short message tail
class RunState:
    phase: str = "idle"
    active_experiment: str | None = None
    current_check: str | None = None
    started_at: float | None = None
    tallies: dict[str, ExperimentTally] = {}
    messages: deque[str] = deque(maxlen=50)
    _lock: threading.Lock = threading.Lock()

    @classmethod
    def begin_run(cls, experiments):
        with cls._lock:
            cls.phase = "experiments"
            cls.active_experiment = cls.current_check = None
            cls.started_at = time.time()
            cls.tallies = {name: ExperimentTally() for name in experiments}
            cls.messages.clear()

    @classmethod
    def set_phase(cls, phase: str):
        with cls._lock:
            cls.phase = phase

    @classmethod
    def start_check(cls, experiment: str, check_id: str):
        with cls._lock:
            cls.active_experiment = experiment
            cls.current_check = check_id
            cls.tallies.setdefault(experiment, ExperimentTally())

    @classmethod
    def finish_check(cls, experiment: str, check_id: str, passed: bool, runtime_s: float, errored: bool = False):
        with cls._lock:
            tally = cls.tallies.setdefault(experiment, ExperimentTally())
            tally.checks += 1
            tally.runtime_s += runtime_s
            if passed:
                tally.passed += 1
            else:
                tally.failed += 1
            if errored:
                tally.errors += 1
            cls.current_check = None
            cls.messages.append(f"{'PASS' if passed else 'FAIL'} {experiment}/{check_id}")

    @classmethod
    def note(cls, message: str):
        with cls._lock:
            cls.messages.append(message)

    @classmethod
    def tally(cls, experiment: str) -> ExperimentTally:
        with cls._lock:
            t = cls.tallies.get(experiment, ExperimentTally())
            return ExperimentTally(**asdict(t))

    @classmethod
    def get_snapshot(cls) -> dict:
        with cls._lock:
            totals = ExperimentTally()
            for t in cls.tallies.values():
                totals.checks += t.checks
                totals.passed += t.passed
                totals.failed += t.failed
                totals.errors += t.errors
                totals.runtime_s += t.runtime_s
            return {
                "phase": cls.phase,
                "experiment": cls.active_experiment,
                "check": cls.current_check,
                "elapsed_s": round(time.time() - cls.started_at, 3) if cls.started_at else 0.0,
                "experiments": {name: asdict(t) for name, t in cls.tallies.items()},
                "totals": asdict(totals),
                "recent": list(cls.messages)[-5:],
            }

    @classmethod
    def reset(cls):
        with cls._lock:
            cls.phase = "idle"
            cls.active_experiment = cls.current_check = None
            cls.started_at = None
            cls.tallies = {}
            cls.messages.clear()


class OperationLedger:
    """
    Registry of the library operations and of the ones invoked since the last reset.

    Operations register themselves at import time through `traced`; the verification
    run compares the two sets to list operations no experiment touched.
    """
    _registered: set[str] = set()
    _invoked: set[str] = set()
    _lock: threading.Lock = threading.Lock()

    @classmethod
    def register(cls, op_name: str):
        with cls._lock:
            cls._registered.add(op_name)

    @classmethod
    def mark(cls, op_name: str):
        with cls._lock:
            cls._invoked.add(op_name)

    @classmethod
    def reset(cls):
        with cls._lock:
            cls._invoked.clear()

    @classmethod
    def registered(cls) -> list[str]:
        with cls._lock:
            return sorted(cls._registered)

    @classmethod
    def invoked(cls) -> list[str]:
        with cls._lock:
            return sorted(cls._invoked)

    @classmethod
    def uninvoked(cls) -> list[str]:
        with cls._lock:
            return sorted(cls._registered - cls._invoked)


def traced(op_name: str):
    """Decorator recording every call of a library operation in the OperationLedger."""
    OperationLedger.register(op_name)

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            OperationLedger.mark(op_name)
            return fn(*args, **kwargs)
        return inner

    return wrap
