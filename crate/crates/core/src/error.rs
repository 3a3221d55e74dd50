use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}: extents must be >= 1")]
    InvalidShape(Vec<usize>),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("axis {axis} is invalid for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("missing feed for placeholder `{0}`")]
    MissingFeed(String),
    #[error("at node `{node}`: {source}")]
    AtNode {
        node: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid architecture field `{field}`: {reason}")]
    Spec { field: &'static str, reason: String },
    #[error("{what} = {value} out of range {lo}..={hi}")]
    Range {
        what: &'static str,
        value: usize,
        lo: usize,
        hi: usize,
    },
    #[error("labels must be 0 or 1, found {0}")]
    Label(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sample error: {0}")]
    Sample(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("generation error: {0}")]
    Generation(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn at_node(self, node: &str) -> Self {
        match self {
            e @ Error::AtNode { .. } => e,
            e => Error::AtNode {
                node: node.into(),
                source: alloc::boxed::Box::new(e),
            },
        }
    }
}
