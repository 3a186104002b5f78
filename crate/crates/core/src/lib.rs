//! Sequential lane segmentation with masked sequential autoencoder
//! pretraining and PolyLoss fine-tuning.

pub mod autograd;
pub mod tensor;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod data;
pub mod eval;
pub mod pretrain;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/autograd.md")]
    mod autograd {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
