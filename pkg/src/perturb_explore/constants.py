from dataclasses import dataclass


@dataclass
class DeskScale:
    """
    Defaults for running experiments on a single desktop CPU
    """

    TOTAL_STEPS: int = 200_000
    SEEDS: tuple[int, ...] = (1, 2, 3, 4, 5)
    LAST_EPISODES_WINDOW: int = 100
    DISCRETIZATION_BINS: int = 10
    CURVE_POINTS: int = 200


@dataclass
class ExitCodes:
    """
    Process exit codes for the command line interface
    """

    OK: int = 0
    USAGE: int = 1
    NUMERICAL: int = 2
    VERIFICATION: int = 3
