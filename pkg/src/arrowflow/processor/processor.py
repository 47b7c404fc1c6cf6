class Processor:
    """Base processor interface"""

    def describe(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} must implement describe()")

    def check_inputs(self):
        raise NotImplementedError(f"{type(self).__name__} must implement check_inputs()")
