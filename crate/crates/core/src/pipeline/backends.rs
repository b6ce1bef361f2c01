use std::path::Path;
use std::sync::Arc;

use crate::backend::{BackendError, CompletionBackend, HmrBackend, SegmentationBackend};
use crate::error::{Error, Result};
use crate::protocol::mock::{MockBackend, MockScript};
use crate::protocol::{BackendKind, Client, HmrClient, HttpTransport, InProcess, StdioTransport, Transport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(String),
    Stdio(Vec<String>),
    Http(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("mock:") {
            return Ok(Self::Mock(path.to_string()));
        }
        if let Some(cmd) = spec.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("stdio backend needs a command".into()));
            }
            return Ok(Self::Stdio(argv));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Self::Http(spec.to_string()));
        }
        Err(Error::Config(format!(
            "unrecognised backend {spec:?}; expected mock:<script>, stdio:<command> or an http URL"
        )))
    }
}

pub fn load_script(path: &Path) -> Result<MockScript> {
    super::files::read_json(path)
}

fn spec_for(spec: Option<&String>, kind: BackendKind) -> Result<BackendSpec> {
    let spec = spec.ok_or_else(|| Error::Config(format!("no {kind} backend configured")))?;
    BackendSpec::parse(spec)
}

fn transport(spec: &BackendSpec, kind: BackendKind) -> Result<Box<dyn Transport>> {
    Ok(match spec {
        BackendSpec::Mock(path) => {
            let script = Arc::new(load_script(Path::new(path))?);
            Box::new(InProcess::new(MockBackend::new(kind, script)))
        }
        BackendSpec::Stdio(argv) => Box::new(StdioTransport::spawn(argv).map_err(BackendError::from)?),
        BackendSpec::Http(url) => Box::new(HttpTransport::new(url.clone())),
    })
}

pub type DynClient = Client<Box<dyn Transport>>;

pub fn connect_segmentation(spec: Option<&String>) -> Result<DynClient> {
    let kind = BackendKind::Segmentation;
    Ok(Client::connect(transport(&spec_for(spec, kind)?, kind)?, kind)?)
}

pub fn connect_completion(spec: Option<&String>) -> Result<DynClient> {
    let kind = BackendKind::Completion;
    Ok(Client::connect(transport(&spec_for(spec, kind)?, kind)?, kind)?)
}

/// Opens `connections` independent connections to the HMR backend.
pub fn connect_hmr(spec: Option<&String>, connections: usize) -> Result<HmrClient<Box<dyn Transport>>> {
    let kind = BackendKind::Hmr;
    let spec = spec_for(spec, kind)?;
    let transports = (0..connections.max(1))
        .map(|_| transport(&spec, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(HmrClient::connect(transports)?)
}

/// Boxed backends for one run.
pub struct Backends {
    pub segmentation: Box<dyn SegmentationBackend>,
    pub completion: Option<Box<dyn CompletionBackend>>,
    pub hmr: Box<dyn HmrBackend>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        assert_eq!(BackendSpec::parse("mock:s.json").unwrap(), BackendSpec::Mock("s.json".into()));
        assert_eq!(
            BackendSpec::parse("stdio:prog  --kind hmr").unwrap(),
            BackendSpec::Stdio(vec!["prog".into(), "--kind".into(), "hmr".into()])
        );
        assert_eq!(
            BackendSpec::parse("http://127.0.0.1:9/x").unwrap(),
            BackendSpec::Http("http://127.0.0.1:9/x".into())
        );
        assert!(BackendSpec::parse("stdio:").is_err());
        assert!(BackendSpec::parse("grpc://x").is_err());
        assert!(matches!(connect_hmr(None, 1), Err(Error::Config(_))));
    }
}
