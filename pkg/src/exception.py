import traceback   # Used to extract detailed stack trace information

import sys         # Gives access to system-specific parameters and functions (like current exception info)


# Custom exception class that extends Python's built-in Exception class
class CustomException(Exception):

    # Constructor method for initializing the custom exception
    def __init__(self, error_message, error_detail: sys = sys):

        super().__init__(error_message)  # Call the base Exception constructor

        # Plain message, kept for callers that print a one-line summary (the CLI)
        self.message = str(error_message)

        # Create a detailed error message using the static method below
        self.error_message = self.get_detailed_error_message(error_message, error_detail)

    # Static method to build a detailed error message with file name & line number
    @staticmethod
    def get_detailed_error_message(error_message, error_detail: sys = sys):

        # Get the traceback object from the exception currently being handled (if any)
        _, _, exc_tb = error_detail.exc_info()

        # Raised outside an except block: nothing to point at
        if exc_tb is None:
            return str(error_message)

        # Walk to the innermost frame, where the original failure happened
        frame = traceback.extract_tb(exc_tb)[-1]

        # Return a formatted error string with file name, line number, and the message
        return f"Error in {frame.filename} , line {frame.lineno} : {error_message}"

    # When the exception object is converted to string, return the detailed error message
    def __str__(self):
        return self.error_message


# Bad argument values or ranges (ratios, thresholds, probabilities, sizes)
class ParameterError(CustomException):
    pass


# Spatial or channel mismatch; messages name both shapes
class ShapeError(CustomException):
    pass


# Non-binary values where a binary mask is required
class DomainError(CustomException):
    pass


# Dataset directory problems: missing folders, unmatched stems, non-grayscale files
class IngestionError(CustomException):
    pass


# Corrupt, incompatible or unwritable checkpoint files
class CheckpointError(CustomException):
    pass


# Unknown config keys, unavailable feature extractor
class ConfigurationError(CustomException):
    pass


# A loss went NaN/Inf; the message names the term and where it happened
class TrainingDivergenceError(CustomException):
    pass
