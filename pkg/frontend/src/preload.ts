/** Image preloading: decode must finish before the trial's pre-delay
 * starts, so no network fetch happens between pre-delay and lock. */

export interface Preloaded {
  url: string;
  element: HTMLImageElement;
}

export function preloadImage(
  url: string,
  doc: Document = document,
): Promise<Preloaded> {
  return new Promise((resolve, reject) => {
    const img = doc.createElement('img');
    img.onload = () => resolve({ url, element: img });
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

export function preloadTrial(
  urls: string[],
  doc: Document = document,
): Promise<Preloaded[]> {
  return Promise.all(urls.map((u) => preloadImage(u, doc)));
}
