"""NieNie: closed-loop biofeedback rhythm engine.

Signal ingestion -> windowed stress classification (from-scratch LSTM) ->
streaming stress score -> adaptive squeeze-release rhythms -> adherence
scoring -> guidance messages, runnable headless or as a live session service.
"""

__version__ = "0.1.0"
