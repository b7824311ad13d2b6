use std::thread;

use termscope_core::harvest::{Fetcher, HttpFetcher};
use termscope_core::store::FetchStatus;
use tiny_http::{Header, Response, Server};
use url::Url;

fn serve() -> String {
    let server = Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for req in server.incoming_requests() {
            let path = req.url().to_string();
            let resp = if path == "/ok" {
                Response::from_string("<html><body><p>Welcome to the shop.</p></body></html>")
                    .with_header(Header::from_bytes("Content-Type", "text/html").unwrap())
            } else if let Some(n) = path.strip_prefix("/r/").and_then(|n| n.parse::<u32>().ok()) {
                let to = if n <= 1 { "/ok".to_string() } else { format!("/r/{}", n - 1) };
                Response::from_string("").with_status_code(302).with_header(Header::from_bytes("Location", to).unwrap())
            } else if path == "/big" {
                Response::from_string("x".repeat(4096))
            } else {
                Response::from_string("nope").with_status_code(404)
            };
            let _ = req.respond(resp);
        }
    });
    addr
}

fn get(f: &HttpFetcher, base: &str, path: &str) -> termscope_core::harvest::PageEvidence {
    f.fetch(&Url::parse(&format!("{base}{path}")).unwrap())
}

#[test]
fn fetch_statuses_and_redirects() {
    let base = serve();
    let f = HttpFetcher::with_defaults().unwrap();

    let ok = get(&f, &base, "/ok");
    assert_eq!(ok.fetch_status, FetchStatus::Ok);
    assert!(ok.html_body.unwrap().contains("Welcome"));

    let missing = get(&f, &base, "/missing");
    assert_eq!(missing.fetch_status, FetchStatus::NotFound);
    assert!(missing.html_body.is_none());

    let ten = get(&f, &base, "/r/10");
    assert_eq!(ten.fetch_status, FetchStatus::Ok);
    assert_eq!(ten.final_url.path(), "/ok");

    let eleven = get(&f, &base, "/r/11");
    assert_eq!(eleven.fetch_status, FetchStatus::TooManyRedirects);
}

#[test]
fn body_is_capped() {
    let base = serve();
    let f = HttpFetcher::new(std::time::Duration::from_secs(5), 1000).unwrap();
    assert_eq!(get(&f, &base, "/big").html_body.unwrap().len(), 1000);
}

#[test]
fn unreachable_host() {
    let f = HttpFetcher::new(std::time::Duration::from_secs(2), 1000).unwrap();
    let ev = f.fetch(&Url::parse("http://127.0.0.1:1/").unwrap());
    assert_eq!(ev.fetch_status, FetchStatus::Network);
}
