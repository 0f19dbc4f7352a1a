//! Toy phoneme recognizer: strided 1-D conv front end, projector,
//! self-attention encoder and a phoneme head trained with CTC.

mod config;
mod ctc;
mod encoder;
mod frontend;
mod model;
mod per;
mod pretrain;

pub use config::RecognizerConfig;
pub use ctc::{collapse, ctc_loss, greedy_decode, required_frames};
pub use encoder::{positional_encoding, Encoder, EncoderBlock};
pub use frontend::{Conv1d, FrontEnd};
pub use model::{Recognition, RecognizerModel, RecognizerPass, RECOGNIZER_FORMAT};
pub use per::{corpus_per, edit_distance, per};
pub use pretrain::{batch_ctc, evaluate_per, pretrain, PretrainConfig, PretrainRecord, Utterance};
