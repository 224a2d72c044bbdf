"""roomrank: find the room in which a musical note sounds best.

Modules:
    roomrank.config            Run settings (flag > env > config file > default)
    roomrank.audio_io          WAV read/write and canonical 16 kHz / 5 s format
    roomrank.rir.synth         Image-source room impulse responses, RT60 diagnostics
    roomrank.rir.corpus        Seeded synthetic IR corpus + manifest
    roomrank.convolver         Direct / FFT convolution, applying a room to a note
    roomrank.features          Mel spectrogram, energy envelope, spectral centroid
    roomrank.scorer.network    Perceptual scorer CNN (forward, backward, Huber, Adam)
    roomrank.scorer.augment    Spectrogram augmentation
    roomrank.scorer.dataset    Ratings manifests, consensus filtering, toy corpus
    roomrank.scorer.training   Training loop and evaluation
    roomrank.scorer.serialize  Binary model file format
    roomrank.ranker            Best-room search, improvement statistics, reports
"""

__version__ = "0.1.0"
