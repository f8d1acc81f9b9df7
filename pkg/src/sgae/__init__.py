"""Scene-graph auto-encoding for image captioning, built on a small numpy autograd."""

from .tensor import Tape, Tensor, SeededRng, finite_diff_check
from .graph import SceneGraph, ObjectNode, RelationshipEdge, Vocabulary, Vocabs, load_corpus
from .dictionary import DictionaryMemory, init_dictionary, reencode
from .gcn import GCN, gcn_forward
from .mgcn import MGCN, fuse, mgcn_forward
from .decoder import Decoder, decode_beam, decode_greedy, decode_sample
from .metrics import bleu, build_df, cider_d
from .checkpoint import Checkpoint
from .trainer import TrainConfig, lr_at, train_captioner, train_sgae

__version__ = "0.1.0"
