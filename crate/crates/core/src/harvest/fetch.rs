use std::collections::HashMap;
use std::io::Read;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use texting_robots::Robot;
use url::Url;

use crate::clock::Clock;
use crate::llm::InFlight;
use crate::store::{normalize_url, FetchStatus};

pub const DEFAULT_BODY_CAP: usize = 5 * 1024 * 1024;
pub const MAX_REDIRECTS: usize = 10;
pub const USER_AGENT: &str = "termscope-crawler/0.1";

/// What one fetch of a page produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageEvidence {
    pub url: Url,
    pub final_url: Url,
    pub html_body: Option<String>,
    pub screenshot: Option<Vec<u8>>,
    pub fetch_status: FetchStatus,
}

impl PageEvidence {
    pub fn ok(url: Url, final_url: Url, body: String) -> Self {
        PageEvidence { url, final_url, html_body: Some(body), screenshot: None, fetch_status: FetchStatus::Ok }
    }

    pub fn failed(url: Url, status: FetchStatus) -> Self {
        PageEvidence { final_url: url.clone(), url, html_body: None, screenshot: None, fetch_status: status }
    }

    pub fn is_ok(&self) -> bool {
        self.fetch_status.is_ok() && (self.html_body.is_some() || self.screenshot.is_some())
    }
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> PageEvidence;
}

/// Screenshot capture backend. Deployments plug in a headless browser here.
pub trait Renderer: Send + Sync {
    fn screenshot(&self, url: &Url) -> Option<Vec<u8>>;
}

/// Fetch a page and, when it loaded and a renderer is available, attach a screenshot.
pub fn fetch_page(fetcher: &dyn Fetcher, url: &Url, renderer: Option<&dyn Renderer>) -> PageEvidence {
    let mut ev = fetcher.fetch(url);
    if let (true, Some(r)) = (ev.fetch_status.is_ok(), renderer) {
        ev.screenshot = r.screenshot(&ev.final_url);
    }
    ev
}

pub fn status_for(code: u16) -> FetchStatus {
    match code {
        200..=299 => FetchStatus::Ok,
        404 | 410 => FetchStatus::NotFound,
        c => FetchStatus::HttpError(c),
    }
}

/// Blocking HTTP fetcher with a body cap and a bounded redirect chain.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
    body_cap: usize,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, body_cap: usize) -> Result<Self, reqwest::Error> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(USER_AGENT)
            .timeout(timeout)
            .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS))
            .build()?;
        Ok(HttpFetcher { client, body_cap })
    }

    pub fn with_defaults() -> Result<Self, reqwest::Error> {
        Self::new(Duration::from_secs(20), DEFAULT_BODY_CAP)
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> PageEvidence {
        let resp = match self.client.get(url.clone()).send() {
            Ok(r) => r,
            Err(e) => {
                let status = if e.is_redirect() {
                    FetchStatus::TooManyRedirects
                } else if e.is_timeout() {
                    FetchStatus::Timeout
                } else {
                    FetchStatus::Network
                };
                tracing::debug!(%url, error = %e, "fetch failed");
                return PageEvidence::failed(url.clone(), status);
            }
        };
        let final_url = resp.url().clone();
        let status = status_for(resp.status().as_u16());
        if !status.is_ok() {
            return PageEvidence { final_url, ..PageEvidence::failed(url.clone(), status) };
        }
        let mut body = Vec::new();
        if let Err(e) = resp.take(self.body_cap as u64).read_to_end(&mut body) {
            let status = if e.to_string().contains("timed out") { FetchStatus::Timeout } else { FetchStatus::Network };
            return PageEvidence { final_url, ..PageEvidence::failed(url.clone(), status) };
        }
        PageEvidence::ok(url.clone(), final_url, String::from_utf8_lossy(&body).into_owned())
    }
}

#[derive(Debug, Clone)]
pub enum MemoryResponse {
    Html(String),
    Status(u16),
    Redirect(String),
}

/// In-memory site fixtures, keyed by normalized URL.
#[derive(Debug, Default)]
pub struct MemoryFetcher {
    pages: HashMap<String, MemoryResponse>,
    hits: Mutex<HashMap<String, usize>>,
}

fn key(url: &str) -> String {
    normalize_url(url).map(|u| u.to_string()).unwrap_or_else(|_| url.to_string())
}

impl MemoryFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(mut self, url: &str, html: &str) -> Self {
        self.pages.insert(key(url), MemoryResponse::Html(html.to_string()));
        self
    }

    pub fn status(mut self, url: &str, code: u16) -> Self {
        self.pages.insert(key(url), MemoryResponse::Status(code));
        self
    }

    pub fn redirect(mut self, from: &str, to: &str) -> Self {
        self.pages.insert(key(from), MemoryResponse::Redirect(to.to_string()));
        self
    }

    pub fn insert(&mut self, url: &str, response: MemoryResponse) {
        self.pages.insert(key(url), response);
    }

    /// How many times `url` was requested directly.
    pub fn hits(&self, url: &str) -> usize {
        self.hits.lock().unwrap().get(&key(url)).copied().unwrap_or(0)
    }

    pub fn total_hits(&self) -> usize {
        self.hits.lock().unwrap().values().sum()
    }
}

impl Fetcher for MemoryFetcher {
    fn fetch(&self, url: &Url) -> PageEvidence {
        *self.hits.lock().unwrap().entry(key(url.as_str())).or_insert(0) += 1;
        let mut current = url.clone();
        for _ in 0..=MAX_REDIRECTS {
            match self.pages.get(&key(current.as_str())) {
                Some(MemoryResponse::Html(body)) => return PageEvidence::ok(url.clone(), current, body.clone()),
                Some(MemoryResponse::Status(code)) => {
                    let status = status_for(*code);
                    return match status {
                        FetchStatus::Ok => PageEvidence::ok(url.clone(), current, String::new()),
                        s => PageEvidence { final_url: current, ..PageEvidence::failed(url.clone(), s) },
                    };
                }
                Some(MemoryResponse::Redirect(to)) => match current.join(to) {
                    Ok(next) => current = next,
                    Err(_) => return PageEvidence::failed(url.clone(), FetchStatus::Network),
                },
                None => {
                    let host_known = self
                        .pages
                        .keys()
                        .any(|k| Url::parse(k).ok().and_then(|u| u.host_str().map(str::to_owned)).as_deref() == current.host_str());
                    let status = if host_known { FetchStatus::NotFound } else { FetchStatus::Network };
                    return PageEvidence { final_url: current, ..PageEvidence::failed(url.clone(), status) };
                }
            }
        }
        PageEvidence::failed(url.clone(), FetchStatus::TooManyRedirects)
    }
}

/// Fixed screenshots per URL, for tests and offline replays.
#[derive(Debug, Default)]
pub struct MemoryRenderer {
    shots: HashMap<String, Vec<u8>>,
}

impl MemoryRenderer {
    pub fn with(mut self, url: &str, png: Vec<u8>) -> Self {
        self.shots.insert(key(url), png);
        self
    }
}

impl Renderer for MemoryRenderer {
    fn screenshot(&self, url: &Url) -> Option<Vec<u8>> {
        self.shots.get(&key(url.as_str())).cloned()
    }
}

#[derive(Debug, Clone)]
pub struct PolitenessConfig {
    pub min_delay: Duration,
    pub max_hosts_in_flight: usize,
    pub user_agent: String,
    pub respect_robots: bool,
}

impl Default for PolitenessConfig {
    fn default() -> Self {
        PolitenessConfig {
            min_delay: Duration::from_secs(1),
            max_hosts_in_flight: 16,
            user_agent: USER_AGENT.to_string(),
            respect_robots: true,
        }
    }
}

#[derive(Default)]
struct HostState {
    last_request: Option<Duration>,
    robots: Option<Option<Robot>>,
}

/// Wraps a fetcher with robots.txt, a per-host delay, a global host cap and
/// a once-per-run memo.
pub struct PoliteFetcher<F> {
    inner: F,
    clock: Arc<dyn Clock>,
    config: PolitenessConfig,
    hosts: Mutex<HashMap<String, Arc<Mutex<HostState>>>>,
    memo: Mutex<HashMap<Url, PageEvidence>>,
    gate: InFlight,
}

impl<F: Fetcher> PoliteFetcher<F> {
    pub fn new(inner: F, clock: Arc<dyn Clock>, config: PolitenessConfig) -> Self {
        PoliteFetcher {
            gate: InFlight::new(config.max_hosts_in_flight),
            inner,
            clock,
            config,
            hosts: Mutex::new(HashMap::new()),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    fn host(&self, url: &Url) -> Arc<Mutex<HostState>> {
        let name = format!("{}://{}", url.scheme(), url.host_str().unwrap_or_default());
        self.hosts.lock().unwrap().entry(name).or_default().clone()
    }

    fn paced(&self, state: &mut HostState, url: &Url) -> PageEvidence {
        if let Some(last) = state.last_request {
            let now = self.clock.now();
            let ready = last + self.config.min_delay;
            if ready > now {
                self.clock.sleep(ready - now);
            }
        }
        state.last_request = Some(self.clock.now());
        self.inner.fetch(url)
    }

    fn allowed(&self, state: &mut HostState, url: &Url) -> bool {
        if !self.config.respect_robots {
            return true;
        }
        if state.robots.is_none() {
            let robots = url.join("/robots.txt").ok().and_then(|r| {
                let ev = self.paced(state, &r);
                let body = ev.html_body.filter(|_| ev.fetch_status.is_ok())?;
                Robot::new(&self.config.user_agent, body.as_bytes()).ok()
            });
            state.robots = Some(robots);
        }
        match state.robots.as_ref().and_then(Option::as_ref) {
            Some(robot) => robot.allowed(url.as_str()),
            None => true,
        }
    }
}

impl<F: Fetcher> Fetcher for PoliteFetcher<F> {
    fn fetch(&self, url: &Url) -> PageEvidence {
        if let Some(ev) = self.memo.lock().unwrap().get(url) {
            return ev.clone();
        }
        let host = self.host(url);
        let mut state = host.lock().unwrap();
        if let Some(ev) = self.memo.lock().unwrap().get(url) {
            return ev.clone();
        }
        let _slot = self.gate.enter();
        let ev = if self.allowed(&mut state, url) {
            self.paced(&mut state, url)
        } else {
            PageEvidence::failed(url.clone(), FetchStatus::RobotsDisallowed)
        };
        self.memo.lock().unwrap().insert(url.clone(), ev.clone());
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn u(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn memory_fetcher_statuses() {
        let f = MemoryFetcher::new()
            .page("https://a.example/", "<p>hi</p>")
            .status("https://a.example/gone", 410)
            .redirect("https://a.example/old", "/");
        assert!(f.fetch(&u("https://a.example/")).is_ok());
        assert_eq!(f.fetch(&u("https://a.example/gone")).fetch_status, FetchStatus::NotFound);
        assert_eq!(f.fetch(&u("https://a.example/missing")).fetch_status, FetchStatus::NotFound);
        assert_eq!(f.fetch(&u("https://nowhere.example/")).fetch_status, FetchStatus::Network);
        let r = f.fetch(&u("https://a.example/old"));
        assert_eq!(r.final_url, u("https://a.example/"));
        assert_eq!(r.url, u("https://a.example/old"));
    }

    #[test]
    fn memory_redirect_loop_is_capped() {
        let f = MemoryFetcher::new().redirect("https://a.example/x", "/y").redirect("https://a.example/y", "/x");
        assert_eq!(f.fetch(&u("https://a.example/x")).fetch_status, FetchStatus::TooManyRedirects);
    }

    #[test]
    fn polite_fetcher_memoizes_and_paces() {
        let clock = Arc::new(ManualClock::default());
        let inner = MemoryFetcher::new()
            .page("https://a.example/", "home")
            .page("https://a.example/terms", "terms");
        let f = PoliteFetcher::new(inner, clock.clone(), PolitenessConfig::default());
        let t0 = clock.now();
        f.fetch(&u("https://a.example/"));
        f.fetch(&u("https://a.example/"));
        f.fetch(&u("https://a.example/terms"));
        assert_eq!(f.inner().hits("https://a.example/"), 1);
        assert_eq!(f.inner().hits("https://a.example/terms"), 1);
        // robots.txt, homepage, terms: three paced requests on one host
        assert!(clock.now() - t0 >= Duration::from_secs(2));
    }

    #[test]
    fn robots_disallow_is_honored() {
        let clock = Arc::new(ManualClock::default());
        let inner = MemoryFetcher::new()
            .page("https://a.example/robots.txt", "User-agent: *\nDisallow: /private\n")
            .page("https://a.example/private/terms", "secret")
            .page("https://a.example/terms", "ok");
        let f = PoliteFetcher::new(inner, clock, PolitenessConfig::default());
        assert_eq!(f.fetch(&u("https://a.example/private/terms")).fetch_status, FetchStatus::RobotsDisallowed);
        assert!(f.fetch(&u("https://a.example/terms")).is_ok());
        assert_eq!(f.inner().hits("https://a.example/private/terms"), 0);
        assert_eq!(f.inner().hits("https://a.example/robots.txt"), 1);
    }

    #[test]
    fn renderer_attaches_screenshot() {
        let f = MemoryFetcher::new().page("https://a.example/", "x");
        let r = MemoryRenderer::default().with("https://a.example/", vec![1, 2, 3]);
        let ev = fetch_page(&f, &u("https://a.example/"), Some(&r));
        assert_eq!(ev.screenshot, Some(vec![1, 2, 3]));
    }
}
