"""Training, evaluation, generation, persistence and the command line."""
