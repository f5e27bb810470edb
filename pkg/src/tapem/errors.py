"""Exception hierarchy; ``exit_code`` drives the CLI's process status."""


class TapemError(Exception):
    exit_code = 1


class ConfigError(TapemError, ValueError):
    exit_code = 1


class InputError(TapemError, ValueError):
    exit_code = 1


class ParseError(TapemError, ValueError):
    exit_code = 2

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class IntegrityError(TapemError):
    exit_code = 2


class UnknownNodeError(TapemError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


class NodeTypeError(TapemError, TypeError):
    exit_code = 2


class ShapeError(TapemError, ValueError):
    exit_code = 3


class NumericError(TapemError, ArithmeticError):
    exit_code = 3


class ContractError(TapemError, AssertionError):
    """A caller broke an operation's precondition."""

    exit_code = 3
