use thiserror::Error;
use url::Url;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UrlError {
    #[error("cannot parse url {0:?}: {1}")]
    Parse(String, String),
    #[error("url {0:?} has no host")]
    NoHost(String),
    #[error("unsupported scheme in {0:?}")]
    Scheme(String),
    #[error("url {0:?} is not normalized")]
    NotNormalized(String),
}

/// Canonical site identity: lowercase scheme and host, no fragment, no
/// default port. The query string is kept. Bare hosts get `https://`.
pub fn normalize_url(input: &str) -> Result<Url, UrlError> {
    let trimmed = input.trim();
    let candidate = if trimmed.contains("://") {
        trimmed.to_string()
    } else {
        format!("https://{trimmed}")
    };
    let mut url =
        Url::parse(&candidate).map_err(|e| UrlError::Parse(input.to_string(), e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(UrlError::Scheme(input.to_string()));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(UrlError::NoHost(input.to_string()));
    }
    // The url crate already lowercases scheme/host and drops default ports.
    url.set_fragment(None);
    Ok(url)
}

pub fn is_normalized(url: &Url) -> bool {
    normalize_url(url.as_str()).is_ok_and(|n| n == *url)
}

pub fn ensure_normalized(url: &Url) -> Result<(), UrlError> {
    if is_normalized(url) {
        Ok(())
    } else {
        Err(UrlError::NotNormalized(url.to_string()))
    }
}

/// Registrable domain (eTLD+1) of a URL's host; IPs and unknown suffixes fall
/// back to the bare host.
pub fn registrable_domain(url: &Url) -> String {
    let host = url.host_str().unwrap_or_default().trim_end_matches('.');
    if url.host().is_some_and(|h| !matches!(h, url::Host::Domain(_))) {
        return host.to_string();
    }
    match psl::domain_str(host) {
        Some(d) => d.to_string(),
        None => host.to_string(),
    }
}

pub fn same_registrable_domain(a: &Url, b: &Url) -> bool {
    registrable_domain(a) == registrable_domain(b)
}

/// Root page (`scheme://host[:port]/`) of a URL.
pub fn homepage_of(url: &Url) -> Url {
    let mut home = url.clone();
    home.set_path("/");
    home.set_query(None);
    home.set_fragment(None);
    home
}
